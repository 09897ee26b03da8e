#include "tclab/nn.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tclab/rng.hpp"

namespace tclab::nn {

std::string activation_name(Activation a) {
  return a == Activation::kRelu ? "relu" : "tanh";
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation: " + name);
}

MlpNet MlpNet::init(std::vector<int> dims, Activation act, std::uint64_t seed) {
  if (dims.size() < 2) throw std::invalid_argument("MlpNet: need at least input and output dims");
  for (int d : dims) {
    if (d < 1) throw std::invalid_argument("MlpNet: layer dims must be positive");
  }
  MlpNet net;
  net.layer_dims = std::move(dims);
  net.activation = act;
  Rng rng(derive_seed(seed, {0x6e6574u}));
  for (std::size_t l = 0; l + 1 < net.layer_dims.size(); ++l) {
    const int in = net.layer_dims[l];
    const int out = net.layer_dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    Matrix w(in, out);
    for (int i = 0; i < in; ++i)
      for (int j = 0; j < out; ++j) w(i, j) = (2.0 * rng.uniform01() - 1.0) * bound;
    net.weights.push_back(std::move(w));
    net.biases.push_back(Matrix::Zero(1, out));
  }
  return net;
}

Matrix MlpNet::forward(const Matrix& x) const {
  if (x.cols() != input_dim()) {
    throw std::invalid_argument("MlpNet::forward: input has " + std::to_string(x.cols()) +
                                " columns, expected " + std::to_string(input_dim()));
  }
  Matrix h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Matrix z = h * weights[l];
    z.rowwise() += biases[l].row(0);
    if (l + 1 < weights.size()) {
      h = activation == Activation::kRelu ? z.cwiseMax(0.0).eval()
                                          : z.array().tanh().matrix().eval();
    } else {
      h = std::move(z);
    }
  }
  return h;
}

NodeId MlpNet::forward_on(Tape& tape, NodeId x, std::vector<NodeId>* param_ids) const {
  NodeId h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    NodeId w = tape.param(weights[l]);
    NodeId b = tape.param(biases[l]);
    if (param_ids) {
      param_ids->push_back(w);
      param_ids->push_back(b);
    }
    h = tape.affine(h, w, b);
    if (l + 1 < weights.size()) {
      h = activation == Activation::kRelu ? tape.relu(h) : tape.tanh(h);
    }
  }
  return h;
}

NodeId MlpNet::forward_reuse(Tape& tape, NodeId x, const std::vector<NodeId>& param_ids,
                             std::size_t offset) const {
  if (param_ids.size() < offset + 2 * weights.size()) {
    throw std::invalid_argument("MlpNet::forward_reuse: param id list too short");
  }
  NodeId h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = tape.affine(h, param_ids[offset + 2 * l], param_ids[offset + 2 * l + 1]);
    if (l + 1 < weights.size()) {
      h = activation == Activation::kRelu ? tape.relu(h) : tape.tanh(h);
    }
  }
  return h;
}

std::vector<Matrix*> MlpNet::params() {
  std::vector<Matrix*> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(&weights[l]);
    out.push_back(&biases[l]);
  }
  return out;
}

std::vector<const Matrix*> MlpNet::params() const {
  std::vector<const Matrix*> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(&weights[l]);
    out.push_back(&biases[l]);
  }
  return out;
}

long MlpNet::param_count() const {
  long n = 0;
  for (const auto& w : weights) n += w.size();
  for (const auto& b : biases) n += b.size();
  return n;
}

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw std::invalid_argument("checkpoint: matrix must be a non-empty array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j.at(i);
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw std::invalid_argument("checkpoint: ragged matrix rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row.at(c).get<double>();
  }
  return m;
}

}  // namespace

nlohmann::json net_to_json(const MlpNet& net);  // forward decl for corrector.cpp reuse

nlohmann::json net_to_json(const MlpNet& net) {
  nlohmann::json j;
  j["layer_dims"] = net.layer_dims;
  j["activation"] = activation_name(net.activation);
  nlohmann::json ws = nlohmann::json::array();
  nlohmann::json bs = nlohmann::json::array();
  for (const auto& w : net.weights) ws.push_back(matrix_to_json(w));
  for (const auto& b : net.biases) bs.push_back(matrix_to_json(b));
  j["weights"] = std::move(ws);
  j["biases"] = std::move(bs);
  return j;
}

MlpNet net_from_json(const nlohmann::json& j);

MlpNet net_from_json(const nlohmann::json& j) {
  MlpNet net;
  net.layer_dims = j.at("layer_dims").get<std::vector<int>>();
  net.activation = activation_from_name(j.at("activation").get<std::string>());
  if (net.layer_dims.size() < 2) throw std::invalid_argument("checkpoint: bad layer_dims");
  const auto& ws = j.at("weights");
  const auto& bs = j.at("biases");
  if (ws.size() != net.layer_dims.size() - 1 || bs.size() != ws.size()) {
    throw std::invalid_argument("checkpoint: layer count mismatch");
  }
  for (std::size_t l = 0; l + 1 < net.layer_dims.size(); ++l) {
    Matrix w = matrix_from_json(ws.at(l));
    Matrix b = matrix_from_json(bs.at(l));
    if (w.rows() != net.layer_dims[l] || w.cols() != net.layer_dims[l + 1] || b.rows() != 1 ||
        b.cols() != net.layer_dims[l + 1]) {
      throw std::invalid_argument("checkpoint: weight shape mismatch at layer " + std::to_string(l));
    }
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
  }
  return net;
}

std::string net_to_json_string(const MlpNet& net) { return net_to_json(net).dump(2) + "\n"; }

MlpNet net_from_json_string(const std::string& text) {
  return net_from_json(nlohmann::json::parse(text));
}

void Adam::step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("Adam: param/grad count mismatch");
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("Adam: parameter list changed size");
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = *grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw std::invalid_argument("Adam: gradient shape mismatch at tensor " + std::to_string(i));
    }
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

}  // namespace tclab::nn
