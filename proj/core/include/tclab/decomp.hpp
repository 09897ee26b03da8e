#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tclab/gaussian.hpp"
#include "tclab/mi_bounds.hpp"

namespace tclab {

enum class PathKind { kTree, kLine };

std::string path_name(PathKind kind);
PathKind path_from_name(const std::string& name);

struct DecompTerm {
  std::vector<int> x_indices;
  std::vector<int> y_indices;
};

struct DecompositionPlan {
  PathKind path_kind = PathKind::kTree;
  int dim = 0;
  std::vector<DecompTerm> terms;
};

// Line path at dim n: ({0},{1}), ({0,1},{2}), ..., ({0..n-2},{n-1}).
// Tree path at dim 4: ({0},{1}), ({2},{3}), ({0,1},{2,3}); dim 2 degenerates
// to the single MI term. Other tree dims are rejected.
DecompositionPlan build_plan(PathKind kind, int dim);

// Exact per-term MI values for N(0, sigma); they sum to analytic_tc(sigma).
std::vector<double> analytic_term_values(const Eigen::MatrixXd& sigma,
                                         const DecompositionPlan& plan);

struct TcRunConfig {
  int iters = 3000;
  EstimatorConfig estimator;
  double tail_fraction = 0.1;  // final estimate = mean of totals over the last tail
};

struct TcEstimatorRun {
  DecompositionPlan plan;
  EstimatorKind kind = EstimatorKind::kMine;
  std::vector<std::vector<double>> term_trace;  // [iter][term] bound values
  std::vector<double> total_trace;              // [iter] sum of term values
  bool failed = false;
  int failed_iteration = -1;
  std::string failure;
  double tail_fraction = 0.1;
  double final_estimate = 0.0;  // tail mean of total_trace; NaN when failed
};

// Streams batches into the run; iter is the 0-based iteration index.
// Must return a B x dim matrix and be a pure function of iter.
using BatchSource = std::function<nn::Matrix(int iter)>;

// Trains one estimator per plan term jointly on shared batches, recording
// per-iteration bounds. On estimator divergence the partial trace is kept and
// the run is marked failed.
TcEstimatorRun estimate_tc(const BatchSource& source, const DecompositionPlan& plan,
                           EstimatorKind kind, const TcRunConfig& cfg, std::uint64_t seed);

// Convenience wrapper drawing batches from a Gaussian spec.
TcEstimatorRun estimate_tc(const GaussianSpec& spec, const DecompositionPlan& plan,
                           EstimatorKind kind, const TcRunConfig& cfg, std::uint64_t seed);

// Tail mean of one term's trace, same window as final_estimate.
double final_term_estimate(const TcEstimatorRun& run, int term);

// Fraction of the final estimate contributed by the cross-block term of the
// dim-4 tree plan. May exceed 1 or be negative when other terms misbehave.
double third_term_proportion(const TcEstimatorRun& run);

// Trace persistence: CSV with header iter,term_0,...,total.
std::string trace_to_csv(const TcEstimatorRun& run);
void save_trace_csv(const std::string& path, const TcEstimatorRun& run);

}  // namespace tclab
