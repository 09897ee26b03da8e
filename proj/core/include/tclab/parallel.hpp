#pragma once

#include <functional>

namespace tclab {

// Runs fn(0..n-1) on up to `jobs` worker threads. Each task must write only
// to its own output slot; with that discipline results are independent of
// scheduling, so jobs=1 and jobs=N produce identical artifacts.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace tclab
