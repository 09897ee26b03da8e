#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace tclab {

// Unit-diagonal covariance with an exact total-correlation label in nats.
struct GaussianSpec {
  int dim = 0;
  Eigen::MatrixXd sigma;
  double true_tc = 0.0;
  std::uint64_t seed = 0;
  double jitter = 0.0;  // diagonal ridge applied before factorization; 0 in the common case
  std::string id;       // "m<index>" inside a matrices file, empty for ad-hoc specs

  // Throws std::domain_error / std::invalid_argument when the unit-diagonal,
  // symmetry, positive-definiteness or label invariants do not hold.
  void validate() const;
};

struct SampleBatch {
  Eigen::MatrixXd data;  // B x dim, rows i.i.d. N(0, sigma)
  std::string spec_id;
};

// Lower-triangular Cholesky factorization that reports the first failing
// pivot instead of silently producing NaNs.
struct CholeskyResult {
  bool ok = false;
  int bad_pivot = -1;
  Eigen::MatrixXd factor;  // valid only when ok
  double log_det = 0.0;    // log det of the input, valid only when ok
};
CholeskyResult cholesky_factor(const Eigen::MatrixXd& m);

// Total correlation of N(0, sigma): 0.5 * (sum_i log sigma_ii - log det sigma).
// For unit-diagonal sigma this is -0.5 * log det sigma.
double analytic_tc(const Eigen::MatrixXd& sigma);

// Mutual information between index blocks a and b of N(0, sigma):
// 0.5 * (log det sigma_a + log det sigma_b - log det sigma).
// a and b must be a disjoint cover of {0..dim-1}, both non-empty.
double analytic_mi_blocks(const Eigen::MatrixXd& sigma,
                          const std::vector<int>& a,
                          const std::vector<int>& b);

// Builds a random unit-diagonal covariance whose analytic TC matches
// target_tc to 1e-6. Distinct seeds give distinct matrices. The generator
// walks a one-parameter family: a seeded random correlation matrix has its
// smallest eigenvalue zeroed, the result is blended with the identity and
// re-normalized to unit diagonal, and the blend weight is bisected against
// analytic_tc.
GaussianSpec gen_spec_with_target_tc(int dim, double target_tc, std::uint64_t seed);

// Draws `batch` i.i.d. rows from N(0, sigma) via the Cholesky factor.
// Deterministic for fixed (spec, seed).
SampleBatch sample(const GaussianSpec& spec, int batch, std::uint64_t seed);

// Matrices-file persistence: JSON array of specs with stable ids "m<index>".
std::string matrices_to_json(const std::vector<GaussianSpec>& specs);
std::vector<GaussianSpec> matrices_from_json(const std::string& text);
void save_matrices(const std::string& path, const std::vector<GaussianSpec>& specs);
std::vector<GaussianSpec> load_matrices(const std::string& path);

}  // namespace tclab
