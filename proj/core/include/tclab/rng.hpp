#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace tclab {

// splitmix64 finalizer; used both as a mixer and for seed derivation.
std::uint64_t splitmix64(std::uint64_t x);

// Derives an independent stream seed from a root seed and a path of tags,
// e.g. derive_seed(root, {kSeedBatch, iter}). Pure function of its inputs,
// so fan-out over a worker pool cannot change results.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path);

// Deterministic RNG. All sampling is implemented on top of the raw 64-bit
// stream of mt19937_64 (whose output is pinned by the standard), never via
// std::*_distribution, so identical seeds give identical results on any
// conforming implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(splitmix64(seed)) {}

  std::uint64_t next() { return eng_(); }

  // uniform in [0, 1) with 53-bit resolution
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // standard normal, Box-Muller with a cached second value
  double normal();

  // uniform integer in [0, n), rejection sampled
  int uniform_int(int n);

  // Fisher-Yates permutation of {0, ..., n-1}
  std::vector<int> permutation(int n);

 private:
  std::mt19937_64 eng_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace tclab
