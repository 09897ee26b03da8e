#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tclab/tape.hpp"

namespace tclab::nn {

enum class Activation { kRelu, kTanh };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Fully connected net: affine layers with relu/tanh on hidden layers and a
// linear output. Weights are in x out so a forward pass is x * W + b.
struct MlpNet {
  std::vector<int> layer_dims;
  Activation activation = Activation::kRelu;
  std::vector<Matrix> weights;  // [l]: dims[l] x dims[l+1]
  std::vector<Matrix> biases;   // [l]: 1 x dims[l+1]

  // Glorot-uniform init, seeded.
  static MlpNet init(std::vector<int> dims, Activation act, std::uint64_t seed);

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }

  Matrix forward(const Matrix& x) const;

  // Builds the forward graph on a tape, registering every parameter as a
  // leaf. Leaf ids are appended to param_ids in the same order as params().
  NodeId forward_on(Tape& tape, NodeId x, std::vector<NodeId>* param_ids = nullptr) const;

  // Second forward pass over already-registered leaves, so gradients from
  // multiple passes accumulate into the same parameters. param_ids must have
  // been produced by forward_on on the same tape.
  NodeId forward_reuse(Tape& tape, NodeId x, const std::vector<NodeId>& param_ids,
                       std::size_t offset = 0) const;

  std::vector<Matrix*> params();
  std::vector<const Matrix*> params() const;
  long param_count() const;
};

// neural_core checkpoint format: {layer_dims, activation, weights, biases}
std::string net_to_json_string(const MlpNet& net);
MlpNet net_from_json_string(const std::string& text);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected adaptive-moment update over a fixed list of parameter
// tensors. Moment buffers are sized on the first step.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads);

  long step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long step_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace tclab::nn
