#pragma once

// Test-only oracles, kept independent of the library's computation paths:
// an LU determinant (vs the library's Cholesky log-det), a straight-line MLP
// forward (vs the tape), and a plug-in TC from empirical covariance.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "tclab/nn.hpp"

namespace oracles {

// Partial-pivot LU determinant. No reuse of the library's factorizations.
inline double lu_det(Eigen::MatrixXd m) {
  const int n = static_cast<int>(m.rows());
  double det = 1.0;
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::abs(m(r, col)) > std::abs(m(pivot, col))) pivot = r;
    }
    if (m(pivot, col) == 0.0) return 0.0;
    if (pivot != col) {
      m.row(pivot).swap(m.row(col));
      det = -det;
    }
    det *= m(col, col);
    for (int r = col + 1; r < n; ++r) {
      const double f = m(r, col) / m(col, col);
      m.row(r).tail(n - col) -= f * m.row(col).tail(n - col);
    }
  }
  return det;
}

inline double lu_log_det(const Eigen::MatrixXd& m) {
  const double det = lu_det(m);
  if (!(det > 0.0)) throw std::domain_error("lu_log_det: non-positive determinant");
  return std::log(det);
}

// TC of a unit-diagonal-ish covariance via the LU route.
inline double lu_tc(const Eigen::MatrixXd& sigma) {
  double diag_sum = 0.0;
  for (int i = 0; i < sigma.rows(); ++i) diag_sum += std::log(sigma(i, i));
  return 0.5 * (diag_sum - lu_log_det(sigma));
}

// Plug-in TC estimate from samples: TC of the empirical covariance.
inline double plugin_tc(const Eigen::MatrixXd& data) {
  Eigen::MatrixXd centered = data.rowwise() - data.colwise().mean();
  Eigen::MatrixXd cov =
      (centered.transpose() * centered) / static_cast<double>(data.rows());
  return lu_tc(cov);
}

// Straight-line re-evaluation of an MlpNet with scalar loops only.
inline std::vector<double> naive_forward(const tclab::nn::MlpNet& net,
                                         const std::vector<double>& x) {
  std::vector<double> h = x;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const auto& w = net.weights[l];
    const auto& b = net.biases[l];
    std::vector<double> z(static_cast<std::size_t>(w.cols()), 0.0);
    for (int j = 0; j < w.cols(); ++j) {
      double acc = b(0, j);
      for (int i = 0; i < w.rows(); ++i) acc += h[static_cast<std::size_t>(i)] * w(i, j);
      z[static_cast<std::size_t>(j)] = acc;
    }
    if (l + 1 < net.weights.size()) {
      for (double& v : z) {
        v = net.activation == tclab::nn::Activation::kRelu ? (v > 0.0 ? v : 0.0) : std::tanh(v);
      }
    }
    h = std::move(z);
  }
  return h;
}

}  // namespace oracles
