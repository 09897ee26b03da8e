#include "tclab/decomp.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tclab/rng.hpp"
#include "tclab/text.hpp"

namespace tclab {

std::string path_name(PathKind kind) { return kind == PathKind::kTree ? "tree" : "line"; }

PathKind path_from_name(const std::string& name) {
  if (name == "tree") return PathKind::kTree;
  if (name == "line") return PathKind::kLine;
  throw std::invalid_argument("unknown decomposition path: " + name);
}

DecompositionPlan build_plan(PathKind kind, int dim) {
  if (dim < 2) throw std::invalid_argument("build_plan: dim must be >= 2");
  DecompositionPlan plan;
  plan.path_kind = kind;
  plan.dim = dim;
  if (kind == PathKind::kLine) {
    for (int i = 1; i < dim; ++i) {
      DecompTerm term;
      term.x_indices.resize(i);
      std::iota(term.x_indices.begin(), term.x_indices.end(), 0);
      term.y_indices = {i};
      plan.terms.push_back(std::move(term));
    }
    return plan;
  }
  if (dim == 2) {
    plan.terms.push_back({{0}, {1}});
    return plan;
  }
  if (dim == 4) {
    plan.terms.push_back({{0}, {1}});
    plan.terms.push_back({{2}, {3}});
    plan.terms.push_back({{0, 1}, {2, 3}});
    return plan;
  }
  throw std::invalid_argument("build_plan: tree path is defined for dim 2 and dim 4, got dim " +
                              std::to_string(dim));
}

std::vector<double> analytic_term_values(const Eigen::MatrixXd& sigma,
                                         const DecompositionPlan& plan) {
  std::vector<double> values;
  values.reserve(plan.terms.size());
  for (const DecompTerm& term : plan.terms) {
    // MI between the two index groups: restrict sigma to their union first
    std::vector<int> all = term.x_indices;
    all.insert(all.end(), term.y_indices.begin(), term.y_indices.end());
    Eigen::MatrixXd sub(all.size(), all.size());
    for (std::size_t i = 0; i < all.size(); ++i)
      for (std::size_t j = 0; j < all.size(); ++j) sub(i, j) = sigma(all[i], all[j]);
    std::vector<int> a(term.x_indices.size()), b(term.y_indices.size());
    std::iota(a.begin(), a.end(), 0);
    std::iota(b.begin(), b.end(), static_cast<int>(term.x_indices.size()));
    values.push_back(analytic_mi_blocks(sub, a, b));
  }
  return values;
}

namespace {

double tail_mean(const std::vector<double>& xs, double tail_fraction) {
  const int n = static_cast<int>(xs.size());
  const int window = std::max(1, static_cast<int>(std::floor(n * tail_fraction + 0.5)));
  double acc = 0.0;
  for (int i = n - window; i < n; ++i) acc += xs[i];
  return acc / window;
}

}  // namespace

TcEstimatorRun estimate_tc(const BatchSource& source, const DecompositionPlan& plan,
                           EstimatorKind kind, const TcRunConfig& cfg, std::uint64_t seed) {
  if (cfg.iters < 1) throw std::invalid_argument("estimate_tc: iters must be >= 1");
  TcEstimatorRun run;
  run.plan = plan;
  run.kind = kind;
  run.tail_fraction = cfg.tail_fraction;
  run.term_trace.reserve(cfg.iters);
  run.total_trace.reserve(cfg.iters);

  const int n_terms = static_cast<int>(plan.terms.size());
  std::vector<MiEstimator> estimators;
  estimators.reserve(n_terms);
  for (int t = 0; t < n_terms; ++t) {
    estimators.emplace_back(kind, static_cast<int>(plan.terms[t].x_indices.size()),
                            static_cast<int>(plan.terms[t].y_indices.size()), cfg.estimator,
                            derive_seed(seed, {0x696e6974u, static_cast<std::uint64_t>(t)}));
  }

  for (int iter = 0; iter < cfg.iters; ++iter) {
    nn::Matrix data = source(iter);
    if (data.cols() != plan.dim) {
      throw std::invalid_argument("estimate_tc: batch has " + std::to_string(data.cols()) +
                                  " columns, plan needs " + std::to_string(plan.dim));
    }
    std::vector<double> term_values(n_terms);
    try {
      for (int t = 0; t < n_terms; ++t) {
        PairedBatch batch = make_paired_batch(
            data, plan.terms[t].x_indices, plan.terms[t].y_indices,
            derive_seed(seed, {0x6e656773u, static_cast<std::uint64_t>(iter),
                               static_cast<std::uint64_t>(t)}));
        term_values[t] = estimators[t].train_step(batch).bound;
      }
    } catch (const EstimatorDivergence& e) {
      run.failed = true;
      run.failed_iteration = iter;
      run.failure = e.what();
      run.final_estimate = std::numeric_limits<double>::quiet_NaN();
      return run;
    }
    double total = 0.0;
    for (double v : term_values) total += v;
    run.term_trace.push_back(std::move(term_values));
    run.total_trace.push_back(total);
  }
  run.final_estimate = tail_mean(run.total_trace, cfg.tail_fraction);
  return run;
}

TcEstimatorRun estimate_tc(const GaussianSpec& spec, const DecompositionPlan& plan,
                           EstimatorKind kind, const TcRunConfig& cfg, std::uint64_t seed) {
  BatchSource source = [&spec, &cfg, seed](int iter) {
    return sample(spec, cfg.estimator.batch,
                  derive_seed(seed, {0x62617463u, static_cast<std::uint64_t>(iter)}))
        .data;
  };
  return estimate_tc(source, plan, kind, cfg, seed);
}

double final_term_estimate(const TcEstimatorRun& run, int term) {
  if (run.failed || run.term_trace.empty()) {
    throw std::invalid_argument("final_term_estimate: run did not complete");
  }
  if (term < 0 || term >= static_cast<int>(run.term_trace.front().size())) {
    throw std::invalid_argument("final_term_estimate: term index out of range");
  }
  const int n = static_cast<int>(run.term_trace.size());
  const int window = std::max(1, static_cast<int>(std::floor(n * run.tail_fraction + 0.5)));
  double acc = 0.0;
  for (int i = n - window; i < n; ++i) acc += run.term_trace[i][term];
  return acc / window;
}

double third_term_proportion(const TcEstimatorRun& run) {
  if (run.failed) throw std::invalid_argument("third_term_proportion: run failed");
  if (run.plan.path_kind != PathKind::kTree || run.plan.dim != 4 ||
      run.term_trace.empty() || run.term_trace.front().size() != 3) {
    throw std::invalid_argument("third_term_proportion: needs a completed dim-4 tree run");
  }
  const double total = run.final_estimate;
  if (total == 0.0 || !std::isfinite(total)) {
    throw std::domain_error("third_term_proportion: undefined ratio, final total is " +
                            format_double(total));
  }
  return final_term_estimate(run, 2) / total;
}

std::string trace_to_csv(const TcEstimatorRun& run) {
  std::ostringstream out;
  out << "iter";
  const std::size_t n_terms = run.plan.terms.size();
  for (std::size_t t = 0; t < n_terms; ++t) out << ",term_" << t;
  out << ",total\n";
  for (std::size_t i = 0; i < run.total_trace.size(); ++i) {
    out << i;
    for (std::size_t t = 0; t < n_terms; ++t) out << ',' << format_double(run.term_trace[i][t]);
    out << ',' << format_double(run.total_trace[i]) << '\n';
  }
  return out.str();
}

void save_trace_csv(const std::string& path, const TcEstimatorRun& run) {
  write_file(path, trace_to_csv(run));
}

}  // namespace tclab
