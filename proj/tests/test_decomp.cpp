#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "support/oracles.hpp"
#include "tclab/decomp.hpp"
#include "tclab/rng.hpp"

using namespace tclab;
using nn::Matrix;

namespace {

bool term_equals(const DecompTerm& term, std::vector<int> x, std::vector<int> y) {
  return term.x_indices == x && term.y_indices == y;
}

GaussianSpec block_diagonal_spec(double rho) {
  GaussianSpec spec;
  spec.dim = 4;
  spec.sigma = Eigen::MatrixXd::Identity(4, 4);
  spec.sigma(0, 1) = spec.sigma(1, 0) = rho;
  spec.sigma(2, 3) = spec.sigma(3, 2) = rho;
  spec.true_tc = analytic_tc(spec.sigma);
  return spec;
}

}  // namespace

TEST_CASE("line plan telescopes over prefixes") {
  DecompositionPlan plan = build_plan(PathKind::kLine, 4);
  REQUIRE(plan.terms.size() == 3);
  CHECK(term_equals(plan.terms[0], {0}, {1}));
  CHECK(term_equals(plan.terms[1], {0, 1}, {2}));
  CHECK(term_equals(plan.terms[2], {0, 1, 2}, {3}));
}

TEST_CASE("tree plan at dim 4 matches the three-term split") {
  DecompositionPlan plan = build_plan(PathKind::kTree, 4);
  REQUIRE(plan.terms.size() == 3);
  CHECK(term_equals(plan.terms[0], {0}, {1}));
  CHECK(term_equals(plan.terms[1], {2}, {3}));
  CHECK(term_equals(plan.terms[2], {0, 1}, {2, 3}));
}

TEST_CASE("two variables degenerate to a single MI term on both paths") {
  for (PathKind kind : {PathKind::kLine, PathKind::kTree}) {
    DecompositionPlan plan = build_plan(kind, 2);
    REQUIRE(plan.terms.size() == 1);
    CHECK(term_equals(plan.terms[0], {0}, {1}));
  }
}

TEST_CASE("unsupported plans are rejected") {
  CHECK_THROWS_AS(build_plan(PathKind::kTree, 3), std::invalid_argument);
  CHECK_THROWS_AS(build_plan(PathKind::kTree, 6), std::invalid_argument);
  CHECK_THROWS_AS(build_plan(PathKind::kLine, 1), std::invalid_argument);
}

TEST_CASE("line plan generalizes to higher dims") {
  DecompositionPlan plan = build_plan(PathKind::kLine, 7);
  CHECK(plan.terms.size() == 6);
  CHECK(term_equals(plan.terms[5], {0, 1, 2, 3, 4, 5}, {6}));
}

TEST_CASE("analytic term values sum to the total correlation on both paths") {
  Rng rng(99);
  for (int trial = 0; trial < 120; ++trial) {
    const double target = 0.3 + 9.0 * rng.uniform01();
    GaussianSpec spec = gen_spec_with_target_tc(4, target, rng.next());
    for (PathKind kind : {PathKind::kLine, PathKind::kTree}) {
      const auto terms = analytic_term_values(spec.sigma, build_plan(kind, 4));
      double sum = 0.0;
      for (double v : terms) sum += v;
      CHECK(std::abs(sum - spec.true_tc) < 1e-9);
    }
  }
}

TEST_CASE("per-iteration total equals the sum of term bounds exactly") {
  GaussianSpec spec = gen_spec_with_target_tc(4, 2.0, 5);
  TcRunConfig cfg;
  cfg.iters = 60;
  TcEstimatorRun run = estimate_tc(spec, build_plan(PathKind::kTree, 4), EstimatorKind::kMine,
                                   cfg, 404);
  REQUIRE(run.total_trace.size() == 60);
  for (std::size_t i = 0; i < run.total_trace.size(); ++i) {
    double sum = 0.0;
    for (double v : run.term_trace[i]) sum += v;
    CHECK(run.total_trace[i] == sum);
  }
  CHECK(!run.failed);
  CHECK(std::isfinite(run.final_estimate));
}

TEST_CASE("estimate_tc is deterministic per seed") {
  GaussianSpec spec = gen_spec_with_target_tc(4, 3.0, 6);
  TcRunConfig cfg;
  cfg.iters = 40;
  const auto a = estimate_tc(spec, build_plan(PathKind::kLine, 4), EstimatorKind::kNwj, cfg, 77);
  const auto b = estimate_tc(spec, build_plan(PathKind::kLine, 4), EstimatorKind::kNwj, cfg, 77);
  CHECK(a.total_trace == b.total_trace);
  const auto c = estimate_tc(spec, build_plan(PathKind::kLine, 4), EstimatorKind::kNwj, cfg, 78);
  CHECK(a.total_trace != c.total_trace);
}

TEST_CASE("batch dimension mismatching the plan is rejected") {
  TcRunConfig cfg;
  cfg.iters = 5;
  BatchSource bad = [](int) { return Matrix::Zero(8, 3); };
  CHECK_THROWS_AS(
      estimate_tc(bad, build_plan(PathKind::kTree, 4), EstimatorKind::kMine, cfg, 1),
      std::invalid_argument);
}

TEST_CASE("divergence marks the run failed and keeps the partial trace") {
  GaussianSpec spec = gen_spec_with_target_tc(4, 1.0, 8);
  TcRunConfig cfg;
  cfg.iters = 50;
  BatchSource source = [&](int iter) -> Matrix {
    if (iter == 10) {
      return Matrix::Constant(cfg.estimator.batch, 4,
                              std::numeric_limits<double>::quiet_NaN());
    }
    return sample(spec, cfg.estimator.batch, 1000 + iter).data;
  };
  TcEstimatorRun run =
      estimate_tc(source, build_plan(PathKind::kTree, 4), EstimatorKind::kMine, cfg, 55);
  CHECK(run.failed);
  CHECK(run.failed_iteration == 10);
  CHECK(run.total_trace.size() == 10);
  CHECK(std::isnan(run.final_estimate));
  CHECK_THROWS_AS(third_term_proportion(run), std::invalid_argument);
}

TEST_CASE("third_term_proportion is plain arithmetic on the tail") {
  TcEstimatorRun run;
  run.plan = build_plan(PathKind::kTree, 4);
  run.kind = EstimatorKind::kMine;
  run.tail_fraction = 0.1;
  for (int i = 0; i < 100; ++i) {
    run.term_trace.push_back({0.5, 0.5, 1.0});
    run.total_trace.push_back(2.0);
  }
  run.final_estimate = 2.0;
  CHECK(third_term_proportion(run) == doctest::Approx(0.5).epsilon(1e-12));

  TcEstimatorRun zero = run;
  zero.final_estimate = 0.0;
  CHECK_THROWS_AS(third_term_proportion(zero), std::domain_error);

  TcEstimatorRun line = run;
  line.plan = build_plan(PathKind::kLine, 4);
  CHECK_THROWS_AS(third_term_proportion(line), std::invalid_argument);
}

TEST_CASE("block-diagonal spec: the cross term estimates near zero") {
  GaussianSpec spec = block_diagonal_spec(0.8);
  TcRunConfig cfg;
  cfg.iters = 3000;
  TcEstimatorRun run =
      estimate_tc(spec, build_plan(PathKind::kTree, 4), EstimatorKind::kMine, cfg, 2024);
  REQUIRE(!run.failed);
  // analytic third term I(Z12; Z34) is exactly zero for this sigma
  CHECK(analytic_term_values(spec.sigma, run.plan)[2] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(final_term_estimate(run, 2)) < 0.15);
  CHECK(std::abs(third_term_proportion(run)) < 0.1);
}

TEST_CASE("identity covariance: every estimator lands near zero total") {
  GaussianSpec spec;
  spec.dim = 4;
  spec.sigma = Eigen::MatrixXd::Identity(4, 4);
  spec.true_tc = 0.0;
  TcRunConfig cfg;
  cfg.iters = 3000;
  for (EstimatorKind kind : kAllEstimatorKinds) {
    TcEstimatorRun run = estimate_tc(spec, build_plan(PathKind::kTree, 4), kind, cfg, 31337);
    REQUIRE(!run.failed);
    CAPTURE(kind_name(kind));
    CHECK(std::abs(run.final_estimate) < 0.3);
  }
}

TEST_CASE("trace csv carries one term column per plan term") {
  GaussianSpec spec = gen_spec_with_target_tc(4, 1.5, 9);
  TcRunConfig cfg;
  cfg.iters = 30;
  TcEstimatorRun run =
      estimate_tc(spec, build_plan(PathKind::kLine, 4), EstimatorKind::kClub, cfg, 66);
  const std::string csv = trace_to_csv(run);
  std::istringstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "iter,term_0,term_1,term_2,total");
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 30);
}
