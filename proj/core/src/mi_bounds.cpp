#include "tclab/mi_bounds.hpp"

#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "tclab/rng.hpp"

namespace tclab {

using nn::Matrix;
using nn::NodeId;
using nn::Tape;

std::string kind_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::kMine: return "mine";
    case EstimatorKind::kNwj: return "nwj";
    case EstimatorKind::kInfoNce: return "infonce";
    case EstimatorKind::kClub: return "club";
  }
  throw std::invalid_argument("bad EstimatorKind");
}

EstimatorKind kind_from_name(const std::string& name) {
  if (name == "mine") return EstimatorKind::kMine;
  if (name == "nwj") return EstimatorKind::kNwj;
  if (name == "infonce") return EstimatorKind::kInfoNce;
  if (name == "club") return EstimatorKind::kClub;
  throw std::invalid_argument("unknown estimator kind: " + name);
}

std::vector<int> negative_permutation(int b, std::uint64_t seed) {
  if (b < 2) throw std::invalid_argument("negative_permutation: need at least 2 rows");
  Rng rng(derive_seed(seed, {0x6e6567u}));
  std::vector<int> p = rng.permutation(b);
  // Remove fixed points by swapping forward. A swap at i cannot reintroduce
  // one at either position, so the result is a derangement.
  for (int i = 0; i < b; ++i) {
    if (p[i] == i) std::swap(p[i], p[(i + 1) % b]);
  }
  return p;
}

Matrix make_negatives(const Matrix& y, std::uint64_t seed) {
  const int b = static_cast<int>(y.rows());
  std::vector<int> p = negative_permutation(b, seed);
  Matrix out(y.rows(), y.cols());
  for (int i = 0; i < b; ++i) out.row(i) = y.row(p[i]);
  return out;
}

PairedBatch make_paired_batch(const Matrix& data, const std::vector<int>& x_indices,
                              const std::vector<int>& y_indices, std::uint64_t negative_seed) {
  PairedBatch batch;
  batch.x.resize(data.rows(), static_cast<Eigen::Index>(x_indices.size()));
  batch.y.resize(data.rows(), static_cast<Eigen::Index>(y_indices.size()));
  for (std::size_t c = 0; c < x_indices.size(); ++c) batch.x.col(c) = data.col(x_indices[c]);
  for (std::size_t c = 0; c < y_indices.size(); ++c) batch.y.col(c) = data.col(y_indices[c]);
  batch.y_shuffled = make_negatives(batch.y, negative_seed);
  return batch;
}

namespace {

Matrix hstack(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a;
  out.rightCols(b.cols()) = b;
  return out;
}

// rows ordered (i, j) with j fastest: row i*B+j = [x_i | y_j]
Matrix all_pairs(const Matrix& x, const Matrix& y) {
  const Eigen::Index b = x.rows();
  Matrix out(b * b, x.cols() + y.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    out.block(i * b, 0, b, x.cols()).rowwise() = x.row(i);
    out.block(i * b, x.cols(), b, y.cols()) = y;
  }
  return out;
}

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

// log q(t | x) for the diagonal Gaussian with mean mu and log-variance lv
NodeId gaussian_loglik(Tape& tape, NodeId mu, NodeId lv, const Matrix& t) {
  NodeId dif = tape.sub(tape.constant(t), mu);
  NodeId quad = tape.mul(tape.mul(dif, dif), tape.exp(tape.neg(lv)));
  NodeId inner = tape.scalar_add(tape.add(quad, lv), kLog2Pi);
  return tape.scalar_mul(tape.row_sum(inner), -0.5);
}

}  // namespace

MiEstimator::MiEstimator(EstimatorKind kind, int x_dim, int y_dim, const EstimatorConfig& cfg,
                         std::uint64_t seed)
    : kind_(kind), x_dim_(x_dim), y_dim_(y_dim), cfg_(cfg), adam_({cfg.lr}) {
  if (x_dim < 1 || y_dim < 1) throw std::invalid_argument("MiEstimator: dims must be positive");
  if (cfg.hidden < 1) throw std::invalid_argument("MiEstimator: hidden width must be positive");
  if (kind == EstimatorKind::kClub) {
    club_mu_ = nn::MlpNet::init({x_dim, cfg.hidden, cfg.hidden, y_dim}, nn::Activation::kTanh,
                                derive_seed(seed, {0}));
    club_logvar_ = nn::MlpNet::init({x_dim, cfg.hidden, cfg.hidden, y_dim}, nn::Activation::kTanh,
                                    derive_seed(seed, {1}));
  } else {
    critic_ = nn::MlpNet::init({x_dim + y_dim, cfg.hidden, cfg.hidden, 1}, nn::Activation::kRelu,
                               derive_seed(seed, {0}));
  }
}

void MiEstimator::check_batch(const PairedBatch& batch) const {
  if (batch.x.cols() != x_dim_ || batch.y.cols() != y_dim_) {
    throw std::invalid_argument("MiEstimator: batch dims (" + std::to_string(batch.x.cols()) +
                                "," + std::to_string(batch.y.cols()) + ") do not match estimator (" +
                                std::to_string(x_dim_) + "," + std::to_string(y_dim_) + ")");
  }
  if (batch.x.rows() != batch.y.rows() || batch.y_shuffled.rows() != batch.y.rows() ||
      batch.y_shuffled.cols() != batch.y.cols() || batch.x.rows() < 1) {
    throw std::invalid_argument("MiEstimator: misaligned batch");
  }
}

// Kind-specific forward pass. Registers parameters and returns the handles
// each bound/loss is assembled from.
struct ForwardParts {
  NodeId mean_tj = -1;    // MINE
  NodeId me_node = -1;    // MINE: mean_neg[e^T]
  NodeId bound_node = -1; // NWJ, InfoNCE
  NodeId mean_llj = -1;   // CLUB
  NodeId mean_lln = -1;   // CLUB
  std::vector<NodeId> param_ids;
};

namespace {

ForwardParts forward_parts(const MiEstimator& est, const nn::MlpNet& critic,
                           const nn::MlpNet& club_mu, const nn::MlpNet& club_logvar, Tape& tape,
                           const PairedBatch& batch) {
  ForwardParts parts;
  const Eigen::Index b = batch.x.rows();
  switch (est.kind()) {
    case EstimatorKind::kMine: {
      NodeId tj = critic.forward_on(tape, tape.constant(hstack(batch.x, batch.y)), &parts.param_ids);
      // negatives run over the same leaves so both passes feed one gradient
      NodeId tn =
          critic.forward_reuse(tape, tape.constant(hstack(batch.x, batch.y_shuffled)), parts.param_ids);
      parts.mean_tj = tape.mean(tj);
      parts.me_node = tape.mean(tape.exp(tn));
      break;
    }
    case EstimatorKind::kNwj: {
      NodeId tj = critic.forward_on(tape, tape.constant(hstack(batch.x, batch.y)), &parts.param_ids);
      NodeId tn =
          critic.forward_reuse(tape, tape.constant(hstack(batch.x, batch.y_shuffled)), parts.param_ids);
      parts.bound_node =
          tape.sub(tape.mean(tj), tape.mean(tape.exp(tape.scalar_add(tn, -1.0))));
      break;
    }
    case EstimatorKind::kInfoNce: {
      NodeId scores_flat =
          critic.forward_on(tape, tape.constant(all_pairs(batch.x, batch.y)), &parts.param_ids);
      NodeId scores = tape.unflatten_rows(scores_flat, static_cast<int>(b), static_cast<int>(b));
      NodeId per_row = tape.sub(tape.diagonal(scores), tape.row_logsumexp(scores));
      parts.bound_node = tape.scalar_add(tape.mean(per_row), std::log(static_cast<double>(b)));
      break;
    }
    case EstimatorKind::kClub: {
      NodeId x = tape.constant(batch.x);
      NodeId mu = club_mu.forward_on(tape, x, &parts.param_ids);
      NodeId lv = club_logvar.forward_on(tape, x, &parts.param_ids);
      parts.mean_llj = tape.mean(gaussian_loglik(tape, mu, lv, batch.y));
      parts.mean_lln = tape.mean(gaussian_loglik(tape, mu, lv, batch.y_shuffled));
      break;
    }
  }
  return parts;
}

double bound_from_parts(const Tape& tape, EstimatorKind kind, const ForwardParts& parts) {
  switch (kind) {
    case EstimatorKind::kMine:
      return tape.scalar(parts.mean_tj) - std::log(tape.scalar(parts.me_node));
    case EstimatorKind::kNwj:
    case EstimatorKind::kInfoNce:
      return tape.scalar(parts.bound_node);
    case EstimatorKind::kClub:
      return tape.scalar(parts.mean_llj) - tape.scalar(parts.mean_lln);
  }
  throw std::invalid_argument("bad EstimatorKind");
}

}  // namespace

double MiEstimator::bound_value(const PairedBatch& batch) const {
  check_batch(batch);
  Tape tape;
  ForwardParts parts = forward_parts(*this, critic_, club_mu_, club_logvar_, tape, batch);
  const double bound = bound_from_parts(tape, kind_, parts);
  if (!std::isfinite(bound)) {
    throw EstimatorDivergence(kind_, steps_, "non-finite bound value");
  }
  return bound;
}

StepResult MiEstimator::train_step(const PairedBatch& batch) {
  check_batch(batch);
  Tape tape;
  ForwardParts parts = forward_parts(*this, critic_, club_mu_, club_logvar_, tape, batch);
  const double bound = bound_from_parts(tape, kind_, parts);

  NodeId loss_node = -1;
  double reported_loss = 0.0;
  switch (kind_) {
    case EstimatorKind::kMine: {
      const double me = tape.scalar(parts.me_node);
      ema_ = ema_ready_ ? cfg_.mine_ema_rate * ema_ + (1.0 - cfg_.mine_ema_rate) * me : me;
      ema_ready_ = true;
      loss_node = tape.neg(tape.sub(parts.mean_tj, tape.scalar_mul(parts.me_node, 1.0 / ema_)));
      reported_loss = -bound;
      break;
    }
    case EstimatorKind::kNwj:
    case EstimatorKind::kInfoNce:
      loss_node = tape.neg(parts.bound_node);
      reported_loss = -bound;
      break;
    case EstimatorKind::kClub:
      loss_node = tape.neg(parts.mean_llj);
      reported_loss = tape.scalar(loss_node);
      break;
  }

  if (!std::isfinite(bound) || !std::isfinite(reported_loss) ||
      !std::isfinite(tape.scalar(loss_node))) {
    throw EstimatorDivergence(kind_, steps_, "non-finite bound or loss");
  }

  tape.backward(loss_node);

  std::vector<Matrix*> params =
      kind_ == EstimatorKind::kClub ? club_mu_.params() : critic_.params();
  if (kind_ == EstimatorKind::kClub) {
    for (Matrix* p : club_logvar_.params()) params.push_back(p);
  }
  std::vector<Matrix> grad_storage;  // holds zeros for parameters the loss never touched
  std::vector<const Matrix*> grads;
  grads.reserve(params.size());
  grad_storage.reserve(params.size());
  for (std::size_t i = 0; i < parts.param_ids.size(); ++i) {
    const Matrix& g = tape.grad(parts.param_ids[i]);
    if (g.size() == 0) {
      grad_storage.push_back(Matrix::Zero(params[i]->rows(), params[i]->cols()));
      grads.push_back(&grad_storage.back());
    } else {
      grads.push_back(&g);
    }
  }
  adam_.step(params, grads);
  ++steps_;
  return {reported_loss, bound};
}

std::string MiEstimator::to_json_string() const {
  nlohmann::json j;
  j["kind"] = kind_name(kind_);
  j["x_dim"] = x_dim_;
  j["y_dim"] = y_dim_;
  j["ema_denominator"] = ema_;
  j["ema_ready"] = ema_ready_;
  j["steps"] = steps_;
  j["config"] = {{"hidden", cfg_.hidden},
                 {"lr", cfg_.lr},
                 {"batch", cfg_.batch},
                 {"mine_ema_rate", cfg_.mine_ema_rate}};
  if (kind_ == EstimatorKind::kClub) {
    j["mu_net"] = nlohmann::json::parse(net_to_json_string(club_mu_));
    j["logvar_net"] = nlohmann::json::parse(net_to_json_string(club_logvar_));
  } else {
    j["critic"] = nlohmann::json::parse(net_to_json_string(critic_));
  }
  return j.dump(2) + "\n";
}

MiEstimator MiEstimator::from_json_string(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  MiEstimator est;
  est.kind_ = kind_from_name(j.at("kind").get<std::string>());
  est.x_dim_ = j.at("x_dim").get<int>();
  est.y_dim_ = j.at("y_dim").get<int>();
  est.ema_ = j.at("ema_denominator").get<double>();
  est.ema_ready_ = j.value("ema_ready", est.ema_ > 0.0);
  est.steps_ = j.value("steps", 0L);
  const auto& c = j.at("config");
  est.cfg_.hidden = c.at("hidden").get<int>();
  est.cfg_.lr = c.at("lr").get<double>();
  est.cfg_.batch = c.at("batch").get<int>();
  est.cfg_.mine_ema_rate = c.at("mine_ema_rate").get<double>();
  est.adam_ = nn::Adam({est.cfg_.lr});
  if (est.kind_ == EstimatorKind::kClub) {
    est.club_mu_ = nn::net_from_json_string(j.at("mu_net").dump());
    est.club_logvar_ = nn::net_from_json_string(j.at("logvar_net").dump());
  } else {
    est.critic_ = nn::net_from_json_string(j.at("critic").dump());
  }
  return est;
}

}  // namespace tclab
