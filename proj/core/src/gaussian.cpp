#include "tclab/gaussian.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tclab/rng.hpp"
#include "tclab/text.hpp"

namespace tclab {
namespace {

using Eigen::MatrixXd;

constexpr double kSymTol = 1e-12;
constexpr double kDiagTol = 1e-12;
constexpr double kLabelTol = 1e-9;
constexpr double kTargetTol = 1e-6;
constexpr double kJitter = 1e-12;

void check_square(const MatrixXd& m) {
  if (m.rows() < 1 || m.rows() != m.cols()) {
    throw std::invalid_argument("covariance must be a non-empty square matrix");
  }
}

void check_symmetric(const MatrixXd& m) {
  const double dev = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (!(dev <= kSymTol)) {
    throw std::invalid_argument("covariance not symmetric, max deviation " + format_double(dev));
  }
}

// D^{-1/2} M D^{-1/2} with the diagonal forced to exactly 1.
MatrixXd unit_normalize(const MatrixXd& m) {
  const int n = static_cast<int>(m.rows());
  Eigen::VectorXd s = m.diagonal().cwiseSqrt();
  MatrixXd out = m;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out(i, j) = m(i, j) / (s(i) * s(j));
  out = 0.5 * (out + out.transpose()).eval();
  out.diagonal().setOnes();
  return out;
}

// Random correlation matrix with its smallest eigenvalue zeroed out, so that
// blending toward it drives the determinant to zero.
MatrixXd singular_direction(int dim, Rng& rng) {
  MatrixXd a(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) a(i, j) = rng.normal();
  MatrixXd base = unit_normalize(a * a.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(base);
  Eigen::VectorXd vals = eig.eigenvalues();
  vals(0) = 0.0;  // eigenvalues are sorted ascending
  MatrixXd sing = eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (sing + sing.transpose());
}

MatrixXd blend(const MatrixXd& sing, double s) {
  const int n = static_cast<int>(sing.rows());
  return unit_normalize(s * MatrixXd::Identity(n, n) + (1.0 - s) * sing);
}

}  // namespace

CholeskyResult cholesky_factor(const Eigen::MatrixXd& m) {
  check_square(m);
  const int n = static_cast<int>(m.rows());
  CholeskyResult res;
  MatrixXd l = MatrixXd::Zero(n, n);
  double log_det = 0.0;
  for (int j = 0; j < n; ++j) {
    double d = m(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > 0.0) || !std::isfinite(d)) {
      res.ok = false;
      res.bad_pivot = j;
      return res;
    }
    l(j, j) = std::sqrt(d);
    log_det += std::log(d);
    for (int i = j + 1; i < n; ++i) {
      double v = m(i, j) - l.row(i).head(j).dot(l.row(j).head(j));
      l(i, j) = v / l(j, j);
    }
  }
  res.ok = true;
  res.factor = std::move(l);
  res.log_det = log_det;
  return res;
}

double analytic_tc(const Eigen::MatrixXd& sigma) {
  check_square(sigma);
  check_symmetric(sigma);
  CholeskyResult ch = cholesky_factor(sigma);
  if (!ch.ok) {
    throw std::domain_error("covariance not positive definite, Cholesky pivot " +
                            std::to_string(ch.bad_pivot) + " is non-positive");
  }
  double diag_sum = 0.0;
  for (int i = 0; i < sigma.rows(); ++i) diag_sum += std::log(sigma(i, i));
  return 0.5 * (diag_sum - ch.log_det);
}

double analytic_mi_blocks(const Eigen::MatrixXd& sigma,
                          const std::vector<int>& a,
                          const std::vector<int>& b) {
  check_square(sigma);
  const int n = static_cast<int>(sigma.rows());
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("analytic_mi_blocks: both sides of the split must be non-empty");
  }
  std::vector<int> seen(n, 0);
  for (int i : a) {
    if (i < 0 || i >= n || seen[i]++) throw std::invalid_argument("analytic_mi_blocks: bad split");
  }
  for (int i : b) {
    if (i < 0 || i >= n || seen[i]++) throw std::invalid_argument("analytic_mi_blocks: bad split");
  }
  for (int i = 0; i < n; ++i) {
    if (!seen[i]) throw std::invalid_argument("analytic_mi_blocks: split does not cover all indices");
  }
  auto submatrix = [&](const std::vector<int>& idx) {
    MatrixXd s(idx.size(), idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < idx.size(); ++j) s(i, j) = sigma(idx[i], idx[j]);
    return s;
  };
  auto log_det = [](const MatrixXd& m) {
    CholeskyResult ch = cholesky_factor(m);
    if (!ch.ok) {
      throw std::domain_error("principal submatrix not positive definite, pivot " +
                              std::to_string(ch.bad_pivot));
    }
    return ch.log_det;
  };
  CholeskyResult full = cholesky_factor(sigma);
  if (!full.ok) {
    throw std::domain_error("covariance not positive definite, Cholesky pivot " +
                            std::to_string(full.bad_pivot) + " is non-positive");
  }
  return 0.5 * (log_det(submatrix(a)) + log_det(submatrix(b)) - full.log_det);
}

void GaussianSpec::validate() const {
  if (dim < 1) throw std::invalid_argument("GaussianSpec: dim must be positive");
  if (sigma.rows() != dim || sigma.cols() != dim) {
    throw std::invalid_argument("GaussianSpec: sigma shape does not match dim");
  }
  check_symmetric(sigma);
  for (int i = 0; i < dim; ++i) {
    if (std::abs(sigma(i, i) - 1.0) > kDiagTol) {
      throw std::invalid_argument("GaussianSpec: diagonal entry " + std::to_string(i) +
                                  " is not 1.0");
    }
  }
  const double tc = analytic_tc(sigma);  // throws if not positive definite
  if (std::abs(tc - true_tc) > kLabelTol) {
    throw std::invalid_argument("GaussianSpec: true_tc label disagrees with analytic TC by " +
                                format_double(std::abs(tc - true_tc)));
  }
}

GaussianSpec gen_spec_with_target_tc(int dim, double target_tc, std::uint64_t seed) {
  if (dim < 2) throw std::invalid_argument("gen_spec_with_target_tc: dim must be >= 2");
  if (!(target_tc >= 0.0)) throw std::invalid_argument("gen_spec_with_target_tc: target_tc must be >= 0");

  GaussianSpec spec;
  spec.dim = dim;
  spec.seed = seed;

  if (target_tc == 0.0) {
    spec.sigma = Eigen::MatrixXd::Identity(dim, dim);
    spec.true_tc = 0.0;
    return spec;
  }

  constexpr int kMaxAttempts = 16;
  constexpr double kMinBlend = 1e-13;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(derive_seed(seed, {0x6d617472u, static_cast<std::uint64_t>(attempt)}));
    const MatrixXd sing = singular_direction(dim, rng);

    // TC(s) is 0 at s=1 and grows without bound as s -> 0; bisect log s.
    double lo = std::log(kMinBlend), hi = 0.0;
    if (analytic_tc(blend(sing, kMinBlend)) < target_tc) continue;  // cannot bracket, redraw
    double s_mid = 1.0, tc_mid = 0.0;
    bool hit = false;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      s_mid = std::exp(mid);
      tc_mid = analytic_tc(blend(sing, s_mid));
      if (std::abs(tc_mid - target_tc) <= kTargetTol) {
        hit = true;
        break;
      }
      if (tc_mid > target_tc) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    if (!hit) continue;
    spec.sigma = blend(sing, s_mid);
    spec.true_tc = analytic_tc(spec.sigma);
    if (!cholesky_factor(spec.sigma).ok) {
      // near-singular edge: record the ridge that makes factorization viable
      spec.jitter = kJitter;
      spec.sigma += kJitter * MatrixXd::Identity(dim, dim);
      spec.sigma = unit_normalize(spec.sigma);
      spec.true_tc = analytic_tc(spec.sigma);
    }
    if (std::abs(spec.true_tc - target_tc) <= kTargetTol) return spec;
  }
  throw std::runtime_error("gen_spec_with_target_tc: failed to reach target " +
                           format_double(target_tc) + " after " + std::to_string(kMaxAttempts) +
                           " attempts (seed " + std::to_string(seed) + ")");
}

SampleBatch sample(const GaussianSpec& spec, int batch, std::uint64_t seed) {
  if (batch < 1) throw std::invalid_argument("sample: batch must be >= 1");
  CholeskyResult ch = cholesky_factor(spec.sigma);
  if (!ch.ok && spec.jitter == 0.0) {
    // one-shot ridge fallback; specs that needed it at generation time carry it already
    MatrixXd ridged = spec.sigma + kJitter * MatrixXd::Identity(spec.dim, spec.dim);
    ch = cholesky_factor(ridged);
  }
  if (!ch.ok) {
    throw std::domain_error("sample: covariance not positive definite (pivot " +
                            std::to_string(ch.bad_pivot) + "); spec invariant violated upstream");
  }
  Rng rng(derive_seed(seed, {0x73616d70u}));
  MatrixXd z(batch, spec.dim);
  for (int i = 0; i < batch; ++i)
    for (int j = 0; j < spec.dim; ++j) z(i, j) = rng.normal();
  SampleBatch out;
  out.data.noalias() = z * ch.factor.transpose();
  out.spec_id = spec.id;
  return out;
}

std::string matrices_to_json(const std::vector<GaussianSpec>& specs) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const GaussianSpec& s = specs[k];
    nlohmann::json j;
    j["id"] = s.id.empty() ? ("m" + std::to_string(k)) : s.id;
    j["dim"] = s.dim;
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < s.dim; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int c = 0; c < s.dim; ++c) row.push_back(s.sigma(i, c));
      rows.push_back(std::move(row));
    }
    j["sigma"] = std::move(rows);
    j["true_tc"] = s.true_tc;
    j["seed"] = s.seed;
    if (s.jitter != 0.0) j["jitter"] = s.jitter;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::vector<GaussianSpec> matrices_from_json(const std::string& text) {
  nlohmann::json arr = nlohmann::json::parse(text);
  if (!arr.is_array()) throw std::invalid_argument("matrices file: top-level JSON array expected");
  std::vector<GaussianSpec> specs;
  specs.reserve(arr.size());
  for (const auto& j : arr) {
    GaussianSpec s;
    s.id = j.at("id").get<std::string>();
    s.dim = j.at("dim").get<int>();
    const auto& rows = j.at("sigma");
    if (!rows.is_array() || static_cast<int>(rows.size()) != s.dim) {
      throw std::invalid_argument("matrices file: sigma row count mismatch for " + s.id);
    }
    s.sigma.resize(s.dim, s.dim);
    for (int i = 0; i < s.dim; ++i) {
      const auto& row = rows.at(i);
      if (static_cast<int>(row.size()) != s.dim) {
        throw std::invalid_argument("matrices file: sigma column count mismatch for " + s.id);
      }
      for (int c = 0; c < s.dim; ++c) s.sigma(i, c) = row.at(c).get<double>();
    }
    s.true_tc = j.at("true_tc").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.jitter = j.value("jitter", 0.0);
    s.validate();
    specs.push_back(std::move(s));
  }
  return specs;
}

void save_matrices(const std::string& path, const std::vector<GaussianSpec>& specs) {
  write_file(path, matrices_to_json(specs));
}

std::vector<GaussianSpec> load_matrices(const std::string& path) {
  return matrices_from_json(read_file(path));
}

}  // namespace tclab
