#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "tclab/gaussian.hpp"
#include "tclab/mi_bounds.hpp"
#include "tclab/rng.hpp"

using namespace tclab;
using nn::Matrix;

namespace {

GaussianSpec gaussian_2d(double rho) {
  GaussianSpec spec;
  spec.dim = 2;
  spec.sigma.resize(2, 2);
  spec.sigma << 1.0, rho, rho, 1.0;
  spec.true_tc = analytic_tc(spec.sigma);
  return spec;
}

PairedBatch batch_from(const GaussianSpec& spec, int b, std::uint64_t seed) {
  const Matrix data = sample(spec, b, seed).data;
  return make_paired_batch(data, {0}, {1}, derive_seed(seed, {1}));
}

// estimator whose nets are all zero, built through the public checkpoint path
MiEstimator zeroed(EstimatorKind kind, int x_dim, int y_dim, const EstimatorConfig& cfg) {
  MiEstimator est(kind, x_dim, y_dim, cfg, 1);
  nlohmann::json j = nlohmann::json::parse(est.to_json_string());
  for (const char* net : {"critic", "mu_net", "logvar_net"}) {
    if (!j.contains(net)) continue;
    for (auto& layer : j[net]["weights"])
      for (auto& row : layer)
        for (auto& v : row) v = 0.0;
    for (auto& layer : j[net]["biases"])
      for (auto& row : layer)
        for (auto& v : row) v = 0.0;
  }
  return MiEstimator::from_json_string(j.dump());
}

double tail_mean(const std::vector<double>& xs, std::size_t window) {
  double acc = 0.0;
  for (std::size_t i = xs.size() - window; i < xs.size(); ++i) acc += xs[i];
  return acc / static_cast<double>(window);
}

}  // namespace

TEST_CASE("kind names round-trip") {
  for (EstimatorKind kind : kAllEstimatorKinds) {
    CHECK(kind_from_name(kind_name(kind)) == kind);
  }
  CHECK_THROWS_AS(kind_from_name("smile"), std::invalid_argument);
}

TEST_CASE("negative_permutation: b=2 always swaps") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CHECK(negative_permutation(2, seed) == std::vector<int>{1, 0});
  }
}

TEST_CASE("negative_permutation rejects b < 2") {
  CHECK_THROWS_AS(negative_permutation(1, 0), std::invalid_argument);
}

TEST_CASE("negative_permutation is a derangement preserving the multiset") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int b = 2 + rng.uniform_int(60);
    const auto p = negative_permutation(b, rng.next());
    std::vector<int> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < b; ++i) {
      CHECK(sorted[i] == i);
      CHECK(p[i] != i);
    }
  }
}

TEST_CASE("negative_permutation golden for b=4 seed=3") {
  const auto p = negative_permutation(4, 3);
  const auto again = negative_permutation(4, 3);
  CHECK(p == again);
  // frozen output of the seeded routine
  CHECK(p == std::vector<int>{1, 0, 3, 2});
}

TEST_CASE("make_negatives permutes rows only") {
  Rng rng(6);
  Matrix y(5, 2);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 2; ++j) y(i, j) = rng.normal();
  const Matrix shuffled = make_negatives(y, 42);
  std::vector<double> a, b;
  for (int i = 0; i < 5; ++i) {
    a.push_back(y(i, 0) + 1000 * y(i, 1));
    b.push_back(shuffled(i, 0) + 1000 * shuffled(i, 1));
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
}

TEST_CASE("zero critic gives the trivial bound values") {
  EstimatorConfig cfg;
  GaussianSpec spec = gaussian_2d(0.5);
  const PairedBatch batch = batch_from(spec, 32, 7);
  // MINE with T == 0: mean T - log mean e^0 = 0
  CHECK(zeroed(EstimatorKind::kMine, 1, 1, cfg).bound_value(batch) ==
        doctest::Approx(0.0).epsilon(1e-15));
  // InfoNCE with T == 0: log B - log B = 0
  CHECK(zeroed(EstimatorKind::kInfoNce, 1, 1, cfg).bound_value(batch) ==
        doctest::Approx(0.0).epsilon(1e-12));
  // NWJ with T == 0: 0 - e^{-1}
  CHECK(zeroed(EstimatorKind::kNwj, 1, 1, cfg).bound_value(batch) ==
        doctest::Approx(-std::exp(-1.0)).epsilon(1e-12));
  // CLUB with zero nets: q identical for joint and shuffled y in expectation
  // only; the value is (sum of squared diffs) difference, finite
  CHECK(std::isfinite(zeroed(EstimatorKind::kClub, 1, 1, cfg).bound_value(batch)));
}

TEST_CASE("infonce bound never exceeds log B") {
  Rng rng(11);
  GaussianSpec spec = gaussian_2d(0.9);
  for (int trial = 0; trial < 40; ++trial) {
    const int b = 2 + rng.uniform_int(48);
    EstimatorConfig cfg;
    cfg.batch = b;
    MiEstimator est(EstimatorKind::kInfoNce, 1, 1, cfg, rng.next());
    PairedBatch batch = batch_from(spec, b, rng.next());
    // a few noisy training steps to move the critic away from init
    for (int s = 0; s < 3; ++s) est.train_step(batch_from(spec, b, rng.next()));
    CHECK(est.bound_value(batch) <= std::log(static_cast<double>(b)) + 1e-9);
  }
}

TEST_CASE("estimator dims are validated against the batch") {
  EstimatorConfig cfg;
  MiEstimator est(EstimatorKind::kMine, 2, 1, cfg, 1);
  const PairedBatch batch = batch_from(gaussian_2d(0.5), 16, 3);  // x_dim 1
  CHECK_THROWS_AS(est.bound_value(batch), std::invalid_argument);
}

TEST_CASE("identical seeds give identical loss traces") {
  GaussianSpec spec = gaussian_2d(0.7);
  auto trace = [&](std::uint64_t est_seed) {
    EstimatorConfig cfg;
    MiEstimator est(EstimatorKind::kMine, 1, 1, cfg, est_seed);
    std::vector<double> losses;
    for (int step = 0; step < 40; ++step) {
      losses.push_back(est.train_step(batch_from(spec, cfg.batch, 100 + step)).loss);
    }
    return losses;
  };
  CHECK(trace(5) == trace(5));
  CHECK(trace(5) != trace(6));
}

TEST_CASE("mine ema denominator is positive after the first update") {
  GaussianSpec spec = gaussian_2d(0.5);
  EstimatorConfig cfg;
  MiEstimator est(EstimatorKind::kMine, 1, 1, cfg, 2);
  CHECK(est.ema_denominator() == 0.0);
  est.train_step(batch_from(spec, cfg.batch, 3));
  CHECK(est.ema_denominator() > 0.0);
}

TEST_CASE("checkpoint json round-trips estimator behavior") {
  GaussianSpec spec = gaussian_2d(0.6);
  for (EstimatorKind kind : kAllEstimatorKinds) {
    EstimatorConfig cfg;
    MiEstimator est(kind, 1, 1, cfg, 77);
    for (int s = 0; s < 10; ++s) est.train_step(batch_from(spec, cfg.batch, 500 + s));
    MiEstimator back = MiEstimator::from_json_string(est.to_json_string());
    const PairedBatch probe = batch_from(spec, cfg.batch, 999);
    CHECK(back.bound_value(probe) == est.bound_value(probe));
    CHECK(back.ema_denominator() == est.ema_denominator());
  }
}

TEST_CASE("trained mine approaches the analytic MI at rho=0.8") {
  GaussianSpec spec = gaussian_2d(0.8);
  const double mi = analytic_mi_blocks(spec.sigma, {0}, {1});  // 0.51083
  EstimatorConfig cfg;
  cfg.batch = 128;
  MiEstimator est(EstimatorKind::kMine, 1, 1, cfg, 31);
  std::vector<double> bounds;
  for (int step = 0; step < 5000; ++step) {
    bounds.push_back(est.train_step(batch_from(spec, cfg.batch, 40000 + step)).bound);
  }
  CHECK(std::abs(tail_mean(bounds, 500) - mi) < 0.15);
}

TEST_CASE("independent variables: every bound settles near zero") {
  GaussianSpec spec = gaussian_2d(0.0);
  for (EstimatorKind kind : kAllEstimatorKinds) {
    EstimatorConfig cfg;
    MiEstimator est(kind, 1, 1, cfg, 13);
    std::vector<double> bounds;
    for (int step = 0; step < 3000; ++step) {
      bounds.push_back(est.train_step(batch_from(spec, cfg.batch, 90000 + step)).bound);
    }
    const double value = tail_mean(bounds, 300);
    CAPTURE(kind_name(kind));
    CHECK(value >= -0.1);
    CHECK(value <= 0.2);
  }
}

TEST_CASE("club converged bound stays above MI - 0.1 at rho=0.9") {
  GaussianSpec spec = gaussian_2d(0.9);
  const double mi = analytic_mi_blocks(spec.sigma, {0}, {1});
  EstimatorConfig cfg;
  MiEstimator est(EstimatorKind::kClub, 1, 1, cfg, 17);
  std::vector<double> bounds;
  for (int step = 0; step < 3000; ++step) {
    bounds.push_back(est.train_step(batch_from(spec, cfg.batch, 70000 + step)).bound);
  }
  CHECK(tail_mean(bounds, 300) >= mi - 0.1);
}

TEST_CASE("mine per-batch bound variance grows with the true MI") {
  auto batch_variance = [](double mi_target, std::uint64_t seed) {
    const double rho = std::sqrt(1.0 - std::exp(-2.0 * mi_target));
    GaussianSpec spec = gaussian_2d(rho);
    EstimatorConfig cfg;
    MiEstimator est(EstimatorKind::kMine, 1, 1, cfg, seed);
    std::vector<double> bounds;
    for (int step = 0; step < 2500; ++step) {
      bounds.push_back(est.train_step(batch_from(spec, cfg.batch, seed * 100 + step)).bound);
    }
    std::vector<double> tail(bounds.end() - 500, bounds.end());
    double mean = 0.0;
    for (double v : tail) mean += v;
    mean /= tail.size();
    double var = 0.0;
    for (double v : tail) var += (v - mean) * (v - mean);
    return var / tail.size();
  };
  CHECK(batch_variance(3.0, 21) > batch_variance(0.5, 21));
}
