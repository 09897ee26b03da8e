#include "tclab/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace tclab::nn {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

void Tape::check(NodeId id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size())) {
    throw std::invalid_argument("Tape: node id out of range");
  }
}

NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

NodeId Tape::constant(Matrix v) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(v);
  return push(std::move(n));
}

NodeId Tape::param(const Matrix& v) {
  Node n;
  n.op = Op::kParam;
  n.value = v;
  return push(std::move(n));
}

NodeId Tape::affine(NodeId x, NodeId w, NodeId b) {
  check(x);
  check(w);
  check(b);
  const Matrix& xv = nodes_[x].value;
  const Matrix& wv = nodes_[w].value;
  const Matrix& bv = nodes_[b].value;
  require(xv.cols() == wv.rows(), "affine: input width does not match weight rows");
  require(bv.rows() == 1 && bv.cols() == wv.cols(), "affine: bias must be 1 x out");
  Node n;
  n.op = Op::kAffine;
  n.a = x;
  n.b = w;
  n.c = b;
  n.value.noalias() = xv * wv;
  n.value.rowwise() += bv.row(0);
  return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
  check(x);
  Node n;
  n.op = Op::kRelu;
  n.a = x;
  n.value = nodes_[x].value.cwiseMax(0.0);
  return push(std::move(n));
}

NodeId Tape::tanh(NodeId x) {
  check(x);
  Node n;
  n.op = Op::kTanh;
  n.a = x;
  n.value = nodes_[x].value.array().tanh();
  return push(std::move(n));
}

NodeId Tape::softplus(NodeId x) {
  check(x);
  Node n;
  n.op = Op::kSoftplus;
  n.a = x;
  n.value = nodes_[x].value.unaryExpr([](double v) {
    if (v > 30.0) return v;
    if (v < -30.0) return std::exp(v);
    return std::log1p(std::exp(v));
  });
  return push(std::move(n));
}

NodeId Tape::abs(NodeId x) {
  check(x);
  Node n;
  n.op = Op::kAbs;
  n.a = x;
  n.value = nodes_[x].value.cwiseAbs();
  return push(std::move(n));
}

NodeId Tape::neg(NodeId x) {
  check(x);
  Node n;
  n.op = Op::kNeg;
  n.a = x;
  n.value = -nodes_[x].value;
  return push(std::move(n));
}

NodeId Tape::exp(NodeId x) {
  check(x);
  Node n;
  n.op = Op::kExp;
  n.a = x;
  long clamped = 0;
  n.value = nodes_[x].value.unaryExpr([&clamped](double v) {
    if (v > kExpClamp) {
      ++clamped;
      v = kExpClamp;
    }
    return std::exp(v);
  });
  clamp_events_ += clamped;
  return push(std::move(n));
}

NodeId Tape::log(NodeId x) {
  check(x);
  Node n;
  n.op = Op::kLog;
  n.a = x;
  n.value = nodes_[x].value.array().log();
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  check(a);
  check(b);
  require(nodes_[a].value.rows() == nodes_[b].value.rows() &&
              nodes_[a].value.cols() == nodes_[b].value.cols(),
          "add: shape mismatch");
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.value = nodes_[a].value + nodes_[b].value;
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  check(a);
  check(b);
  require(nodes_[a].value.rows() == nodes_[b].value.rows() &&
              nodes_[a].value.cols() == nodes_[b].value.cols(),
          "sub: shape mismatch");
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  n.value = nodes_[a].value - nodes_[b].value;
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  check(a);
  check(b);
  require(nodes_[a].value.rows() == nodes_[b].value.rows() &&
              nodes_[a].value.cols() == nodes_[b].value.cols(),
          "mul: shape mismatch");
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.value = nodes_[a].value.cwiseProduct(nodes_[b].value);
  return push(std::move(n));
}

NodeId Tape::scalar_mul(NodeId a, double c) {
  check(a);
  Node n;
  n.op = Op::kScalarMul;
  n.a = a;
  n.aux = c;
  n.value = c * nodes_[a].value;
  return push(std::move(n));
}

NodeId Tape::scalar_add(NodeId a, double c) {
  check(a);
  Node n;
  n.op = Op::kScalarAdd;
  n.a = a;
  n.aux = c;
  n.value = nodes_[a].value.array() + c;
  return push(std::move(n));
}

NodeId Tape::sum(NodeId a) {
  check(a);
  Node n;
  n.op = Op::kSum;
  n.a = a;
  n.value = Matrix::Constant(1, 1, nodes_[a].value.sum());
  return push(std::move(n));
}

NodeId Tape::mean(NodeId a) {
  check(a);
  Node n;
  n.op = Op::kMean;
  n.a = a;
  n.value = Matrix::Constant(1, 1, nodes_[a].value.mean());
  return push(std::move(n));
}

NodeId Tape::row_sum(NodeId a) {
  check(a);
  Node n;
  n.op = Op::kRowSum;
  n.a = a;
  n.value = nodes_[a].value.rowwise().sum();
  return push(std::move(n));
}

NodeId Tape::row_logsumexp(NodeId a) {
  check(a);
  const Matrix& x = nodes_[a].value;
  require(x.cols() >= 1, "row_logsumexp: empty rows");
  Node n;
  n.op = Op::kRowLogSumExp;
  n.a = a;
  n.value.resize(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    n.value(i, 0) = m + std::log((x.row(i).array() - m).exp().sum());
  }
  return push(std::move(n));
}

NodeId Tape::unflatten_rows(NodeId a, int rows, int cols) {
  check(a);
  const Matrix& x = nodes_[a].value;
  require(x.cols() == 1 && x.rows() == static_cast<Eigen::Index>(rows) * cols,
          "unflatten_rows: input must be (rows*cols) x 1");
  Node n;
  n.op = Op::kUnflatten;
  n.a = a;
  n.value.resize(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) n.value(r, c) = x(static_cast<Eigen::Index>(r) * cols + c, 0);
  return push(std::move(n));
}

NodeId Tape::diagonal(NodeId a) {
  check(a);
  const Matrix& x = nodes_[a].value;
  require(x.rows() == x.cols(), "diagonal: matrix must be square");
  Node n;
  n.op = Op::kDiagonal;
  n.a = a;
  n.value = x.diagonal();
  return push(std::move(n));
}

NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Eigen::Index rows = -1, cols = 0;
  for (NodeId p : parts) {
    check(p);
    const Matrix& v = nodes_[p].value;
    if (rows < 0) rows = v.rows();
    require(v.rows() == rows, "concat_cols: row count mismatch");
    cols += v.cols();
  }
  Node n;
  n.op = Op::kConcatCols;
  n.parts = parts;
  n.value.resize(rows, cols);
  Eigen::Index at = 0;
  for (NodeId p : parts) {
    const Matrix& v = nodes_[p].value;
    n.value.middleCols(at, v.cols()) = v;
    at += v.cols();
  }
  return push(std::move(n));
}

Matrix& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

const Matrix& Tape::grad(NodeId id) const {
  check(id);
  const Node& n = nodes_[id];
  if (!n.has_grad) {
    static const Matrix kEmpty;
    return kEmpty;
  }
  return n.grad;
}

double Tape::scalar(NodeId id) const {
  check(id);
  const Matrix& v = nodes_[id].value;
  require(v.rows() == 1 && v.cols() == 1, "scalar: node is not 1x1");
  return v(0, 0);
}

void Tape::backward(NodeId loss) {
  check(loss);
  require(nodes_[loss].value.rows() == 1 && nodes_[loss].value.cols() == 1,
          "backward: loss must be a 1x1 node");
  grad_buffer(loss)(0, 0) = 1.0;

  for (int id = loss; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    const Matrix& g = n.grad;
    switch (n.op) {
      case Op::kConstant:
      case Op::kParam:
        break;
      case Op::kAffine: {
        const Matrix& xv = nodes_[n.a].value;
        const Matrix& wv = nodes_[n.b].value;
        grad_buffer(n.a).noalias() += g * wv.transpose();
        grad_buffer(n.b).noalias() += xv.transpose() * g;
        grad_buffer(n.c).row(0) += g.colwise().sum();
        break;
      }
      case Op::kRelu: {
        const Matrix& xv = nodes_[n.a].value;
        grad_buffer(n.a).array() += g.array() * (xv.array() > 0.0).cast<double>();
        break;
      }
      case Op::kTanh:
        grad_buffer(n.a).array() += g.array() * (1.0 - n.value.array().square());
        break;
      case Op::kSoftplus: {
        const Matrix& xv = nodes_[n.a].value;
        grad_buffer(n.a).array() +=
            g.array() * xv.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }).array();
        break;
      }
      case Op::kAbs: {
        const Matrix& xv = nodes_[n.a].value;
        grad_buffer(n.a).array() +=
            g.array() * xv.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }).array();
        break;
      }
      case Op::kNeg:
        grad_buffer(n.a) -= g;
        break;
      case Op::kExp:
        // derivative taken at the clamped point, so saturated entries keep a
        // finite pull instead of NaN/Inf
        grad_buffer(n.a).array() += g.array() * n.value.array();
        break;
      case Op::kLog:
        grad_buffer(n.a).array() += g.array() / nodes_[n.a].value.array();
        break;
      case Op::kAdd:
        grad_buffer(n.a) += g;
        grad_buffer(n.b) += g;
        break;
      case Op::kSub:
        grad_buffer(n.a) += g;
        grad_buffer(n.b) -= g;
        break;
      case Op::kMul:
        grad_buffer(n.a).array() += g.array() * nodes_[n.b].value.array();
        grad_buffer(n.b).array() += g.array() * nodes_[n.a].value.array();
        break;
      case Op::kScalarMul:
        grad_buffer(n.a) += n.aux * g;
        break;
      case Op::kScalarAdd:
        grad_buffer(n.a) += g;
        break;
      case Op::kSum:
        grad_buffer(n.a).array() += g(0, 0);
        break;
      case Op::kMean:
        grad_buffer(n.a).array() += g(0, 0) / static_cast<double>(nodes_[n.a].value.size());
        break;
      case Op::kRowSum:
        grad_buffer(n.a).colwise() += g.col(0);
        break;
      case Op::kRowLogSumExp: {
        const Matrix& xv = nodes_[n.a].value;
        Matrix& ga = grad_buffer(n.a);
        for (Eigen::Index i = 0; i < xv.rows(); ++i) {
          ga.row(i).array() += g(i, 0) * (xv.row(i).array() - n.value(i, 0)).exp();
        }
        break;
      }
      case Op::kUnflatten: {
        Matrix& ga = grad_buffer(n.a);
        const int cols = static_cast<int>(n.value.cols());
        for (Eigen::Index r = 0; r < n.value.rows(); ++r)
          for (int c = 0; c < cols; ++c) ga(r * cols + c, 0) += g(r, c);
        break;
      }
      case Op::kDiagonal: {
        Matrix& ga = grad_buffer(n.a);
        for (Eigen::Index i = 0; i < n.value.rows(); ++i) ga(i, i) += g(i, 0);
        break;
      }
      case Op::kConcatCols: {
        Eigen::Index at = 0;
        for (NodeId p : n.parts) {
          const Eigen::Index w = nodes_[p].value.cols();
          grad_buffer(p) += g.middleCols(at, w);
          at += w;
        }
        break;
      }
    }
  }
}

}  // namespace tclab::nn
