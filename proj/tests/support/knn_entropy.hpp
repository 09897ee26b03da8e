#pragma once

// Kozachenko-Leonenko differential-entropy estimator over a small kd-tree,
// used as a sample-based oracle for the analytic Gaussian TC formulas.
// h ~= psi(n) - psi(1) + log V_d + (d/n) * sum_i log eps_i with eps_i the
// nearest-neighbor distance of point i.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace knn {

class KdTree {
 public:
  explicit KdTree(const Eigen::MatrixXd& pts) : pts_(pts), idx_(pts.rows()) {
    for (std::size_t i = 0; i < idx_.size(); ++i) idx_[i] = static_cast<int>(i);
    build(0, static_cast<int>(idx_.size()), 0);
  }

  // squared distance to the nearest neighbor other than `self`
  double nn_sq_dist(int self) const {
    double best = std::numeric_limits<double>::infinity();
    query(0, static_cast<int>(idx_.size()), 0, self, best);
    return best;
  }

 private:
  void build(int lo, int hi, int axis) {
    if (hi - lo <= 1) return;
    const int mid = (lo + hi) / 2;
    std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                     [&](int a, int b) { return pts_(a, axis) < pts_(b, axis); });
    const int next = (axis + 1) % static_cast<int>(pts_.cols());
    build(lo, mid, next);
    build(mid + 1, hi, next);
  }

  void query(int lo, int hi, int axis, int self, double& best) const {
    if (hi <= lo) return;
    const int mid = (lo + hi) / 2;
    const int p = idx_[mid];
    if (p != self) {
      const double d = (pts_.row(p) - pts_.row(self)).squaredNorm();
      if (d < best) best = d;
    }
    if (hi - lo == 1) return;
    const int next = (axis + 1) % static_cast<int>(pts_.cols());
    const double delta = pts_(self, axis) - pts_(idx_[mid], axis);
    if (delta < 0.0) {
      query(lo, mid, next, self, best);
      if (delta * delta < best) query(mid + 1, hi, next, self, best);
    } else {
      query(mid + 1, hi, next, self, best);
      if (delta * delta < best) query(lo, mid, next, self, best);
    }
  }

  const Eigen::MatrixXd& pts_;
  std::vector<int> idx_;
};

inline double unit_ball_log_volume(int d) {
  return 0.5 * d * std::log(std::numbers::pi) - std::lgamma(0.5 * d + 1.0);
}

// psi(n) - psi(1) = H_{n-1}
inline double harmonic(long n) {
  double acc = 0.0;
  for (long k = 1; k <= n; ++k) acc += 1.0 / static_cast<double>(k);
  return acc;
}

inline double kl_entropy(const Eigen::MatrixXd& pts) {
  const long n = pts.rows();
  const int d = static_cast<int>(pts.cols());
  double log_eps_sum = 0.0;
  if (d == 1) {
    std::vector<double> xs(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) xs[static_cast<std::size_t>(i)] = pts(i, 0);
    std::sort(xs.begin(), xs.end());
    for (long i = 0; i < n; ++i) {
      double eps = std::numeric_limits<double>::infinity();
      if (i > 0) eps = std::min(eps, xs[i] - xs[i - 1]);
      if (i + 1 < n) eps = std::min(eps, xs[i + 1] - xs[i]);
      log_eps_sum += std::log(eps);
    }
  } else {
    KdTree tree(pts);
    for (long i = 0; i < n; ++i) {
      log_eps_sum += 0.5 * std::log(tree.nn_sq_dist(static_cast<int>(i)));
    }
  }
  return harmonic(n - 1) + unit_ball_log_volume(d) +
         static_cast<double>(d) / static_cast<double>(n) * log_eps_sum;
}

// local lower Cholesky so the oracle shares nothing with the library path
inline Eigen::MatrixXd chol_lower(const Eigen::MatrixXd& m) {
  const int n = static_cast<int>(m.rows());
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    double d = m(j, j) - l.row(j).head(j).squaredNorm();
    l(j, j) = std::sqrt(d);
    for (int i = j + 1; i < n; ++i) {
      l(i, j) = (m(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  return l;
}

// TC = sum_j h(z_j) - h(Z). The joint entropy is computed on data whitened by
// the EMPIRICAL covariance (a pure change of variables, h(Z) = h(W(Z-mu)) -
// log det W), which removes the anisotropy bias of the nearest-neighbor
// estimator on strongly correlated samples.
inline double knn_tc(const Eigen::MatrixXd& data) {
  double marginals = 0.0;
  for (int j = 0; j < data.cols(); ++j) {
    marginals += kl_entropy(data.col(j));
  }
  Eigen::MatrixXd centered = data.rowwise() - data.colwise().mean();
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(data.rows());
  Eigen::MatrixXd l = chol_lower(cov);
  double log_det = 0.0;
  for (int i = 0; i < cov.rows(); ++i) log_det += 2.0 * std::log(l(i, i));
  Eigen::MatrixXd whitened =
      l.triangularView<Eigen::Lower>().solve(centered.transpose()).transpose();
  const double h_joint = kl_entropy(whitened) + 0.5 * log_det;
  return marginals - h_joint;
}

}  // namespace knn
