#pragma once

#include <Eigen/Dense>
#include <vector>

namespace tclab::nn {

using Matrix = Eigen::MatrixXd;
using NodeId = int;

// Reverse-mode tape over dense matrices. The op set is closed: affine,
// relu/tanh/softplus/abs, exp (input clamped at kExpClamp), log, elementwise
// add/sub/mul, scalar ops, sum/mean, row-wise sum and log-sum-exp (max
// shifted), plus the structural ops needed to assemble the losses built on
// it (row unflatten, diagonal, column concat). Shape errors are rejected
// when the node is constructed, not at run time.
//
// A tape is built fresh per training step: register leaves, compose ops,
// call backward(loss) on a 1x1 node, then read grad() for each leaf.
class Tape {
 public:
  static constexpr double kExpClamp = 60.0;

  NodeId constant(Matrix v);
  NodeId param(const Matrix& v);

  // x: B x I, w: I x O, b: 1 x O -> B x O (bias broadcast over rows)
  NodeId affine(NodeId x, NodeId w, NodeId b);

  NodeId relu(NodeId x);
  NodeId tanh(NodeId x);
  NodeId softplus(NodeId x);
  NodeId abs(NodeId x);
  NodeId neg(NodeId x);
  NodeId exp(NodeId x);  // exp(min(x, kExpClamp)); clamps are counted
  NodeId log(NodeId x);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scalar_mul(NodeId a, double c);
  NodeId scalar_add(NodeId a, double c);

  NodeId sum(NodeId a);   // 1x1
  NodeId mean(NodeId a);  // 1x1
  NodeId row_sum(NodeId a);         // B x C -> B x 1
  NodeId row_logsumexp(NodeId a);   // B x C -> B x 1

  // (R*C) x 1 -> R x C, row-major element order
  NodeId unflatten_rows(NodeId a, int rows, int cols);
  NodeId diagonal(NodeId a);  // N x N -> N x 1
  NodeId concat_cols(const std::vector<NodeId>& parts);

  void backward(NodeId loss);

  const Matrix& value(NodeId id) const { return nodes_[id].value; }
  const Matrix& grad(NodeId id) const;
  double scalar(NodeId id) const;

  // number of entries clamped inside exp() since construction
  long exp_clamp_events() const { return clamp_events_; }

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  enum class Op {
    kConstant, kParam, kAffine, kRelu, kTanh, kSoftplus, kAbs, kNeg, kExp, kLog,
    kAdd, kSub, kMul, kScalarMul, kScalarAdd, kSum, kMean, kRowSum,
    kRowLogSumExp, kUnflatten, kDiagonal, kConcatCols,
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    int c = -1;
    std::vector<int> parts;  // kConcatCols only
    double aux = 0.0;
    Matrix value;
    Matrix grad;
    bool has_grad = false;
  };

  NodeId push(Node n);
  Matrix& grad_buffer(int id);
  void check(NodeId id) const;

  std::vector<Node> nodes_;
  long clamp_events_ = 0;
};

}  // namespace tclab::nn
