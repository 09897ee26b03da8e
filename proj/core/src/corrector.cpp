#include "tclab/corrector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tclab/rng.hpp"

namespace tclab {

using nn::Matrix;
using nn::NodeId;
using nn::Tape;

std::string loss_name(LossKind kind) { return kind == LossKind::kMse ? "mse" : "l1"; }

LossKind loss_from_name(const std::string& name) {
  if (name == "mse") return LossKind::kMse;
  if (name == "l1") return LossKind::kL1;
  throw std::invalid_argument("unknown loss kind: " + name);
}

namespace {

std::vector<int> mirrored(const std::vector<int>& dims) {
  return std::vector<int>(dims.rbegin(), dims.rend());
}

Matrix rows_to_matrix(const std::vector<const std::array<double, kSequencePoints>*>& rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), kSequencePoints);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int p = 0; p < kSequencePoints; ++p) m(static_cast<Eigen::Index>(i), p) = (*rows[i])[p];
  return m;
}

// mean squared reconstruction error node over all entries
NodeId recon_loss(Tape& tape, NodeId decoded, NodeId target) {
  NodeId d = tape.sub(decoded, target);
  return tape.mean(tape.mul(d, d));
}

NodeId regression_loss(Tape& tape, NodeId pred, NodeId label, LossKind kind) {
  NodeId d = tape.sub(pred, label);
  return kind == LossKind::kMse ? tape.mean(tape.mul(d, d)) : tape.mean(tape.abs(d));
}

}  // namespace

CorrectorModel CorrectorModel::init(const std::vector<EstimatorKind>& head_kinds,
                                    const CorrectorConfig& cfg, std::uint64_t seed) {
  if (head_kinds.empty()) throw std::invalid_argument("CorrectorModel: need at least one head");
  {
    std::set<EstimatorKind> uniq(head_kinds.begin(), head_kinds.end());
    if (uniq.size() != head_kinds.size()) {
      throw std::invalid_argument("CorrectorModel: duplicate head kinds");
    }
  }
  if (cfg.encoder_dims.size() < 2 || cfg.encoder_dims.front() != kSequencePoints) {
    throw std::invalid_argument("CorrectorModel: encoder input width must be " +
                                std::to_string(kSequencePoints));
  }
  if (cfg.encoder_dims.back() >= cfg.encoder_dims.front()) {
    throw std::invalid_argument("CorrectorModel: bottleneck must be narrower than the input");
  }
  CorrectorModel model;
  model.cfg_ = cfg;
  model.init_seed_ = seed;
  const int bottleneck = cfg.encoder_dims.back();
  for (std::size_t h = 0; h < head_kinds.size(); ++h) {
    CorrectorHead head;
    head.kind = head_kinds[h];
    head.encoder = nn::MlpNet::init(cfg.encoder_dims, nn::Activation::kRelu,
                                    derive_seed(seed, {0x656e63u, h}));
    head.decoder = nn::MlpNet::init(mirrored(cfg.encoder_dims), nn::Activation::kRelu,
                                    derive_seed(seed, {0x646563u, h}));
    model.heads_.push_back(std::move(head));
  }
  std::vector<int> reg_dims;
  reg_dims.push_back(bottleneck * static_cast<int>(head_kinds.size()));
  for (int d : cfg.regressor_hidden) reg_dims.push_back(d);
  reg_dims.push_back(1);
  model.regressor_ = nn::MlpNet::init(reg_dims, nn::Activation::kRelu, derive_seed(seed, {0x726567u}));
  return model;
}

void CorrectorModel::fit_feature_stats(const std::vector<SequenceRecord>& train_records) {
  stats_ = tclab::fit_feature_stats(train_records);
  stats_ready_ = true;
}

std::vector<EpochLoss> CorrectorModel::pretrain(const std::vector<SequenceRecord>& train_records,
                                                std::uint64_t seed) {
  if (!stats_ready_) throw std::logic_error("CorrectorModel::pretrain: fit_feature_stats first");
  pretrain_seed_ = seed;

  // per-head normalized training matrices
  std::vector<Matrix> head_data;
  for (const CorrectorHead& head : heads_) {
    std::vector<std::array<double, kSequencePoints>> seqs;
    for (const SequenceRecord& r : train_records) {
      if (r.kind == head.kind) seqs.push_back(apply_feature_stats(stats_, r.kind, r.sequence));
    }
    if (seqs.empty()) {
      throw std::invalid_argument("CorrectorModel::pretrain: no records for head " +
                                  kind_name(head.kind));
    }
    std::vector<const std::array<double, kSequencePoints>*> ptrs;
    for (const auto& s : seqs) ptrs.push_back(&s);
    head_data.push_back(rows_to_matrix(ptrs));
  }

  auto full_recon = [&](std::size_t h) {
    const Matrix& x = head_data[h];
    Matrix rec = heads_[h].decoder.forward(heads_[h].encoder.forward(x));
    return (rec - x).squaredNorm() / static_cast<double>(x.size());
  };
  auto record_epoch = [&](int epoch) {
    EpochLoss e;
    e.epoch = epoch;
    for (std::size_t h = 0; h < heads_.size(); ++h) e.loss_pre.push_back(full_recon(h));
    e.loss_corr = 0.0;
    e.loss_total = 0.0;
    for (double v : e.loss_pre) e.loss_total += v;
    e.test_corr = std::numeric_limits<double>::quiet_NaN();
    return e;
  };

  std::vector<EpochLoss> history;
  history.push_back(record_epoch(0));

  std::vector<nn::Adam> adams(heads_.size(), nn::Adam({cfg_.lr}));
  std::vector<Rng> shuffles;
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    shuffles.emplace_back(derive_seed(seed, {0x70726574u, h}));
  }
  for (int epoch = 1; epoch <= cfg_.pretrain_epochs; ++epoch) {
    for (std::size_t h = 0; h < heads_.size(); ++h) {
      CorrectorHead& head = heads_[h];
      std::vector<Matrix*> params = head.encoder.params();
      for (Matrix* p : head.decoder.params()) params.push_back(p);
      const int n = static_cast<int>(head_data[h].rows());
      std::vector<int> order = shuffles[h].permutation(n);
      for (int at = 0; at < n; at += cfg_.batch) {
        const int b = std::min(cfg_.batch, n - at);
        Matrix x(b, kSequencePoints);
        for (int i = 0; i < b; ++i) x.row(i) = head_data[h].row(order[at + i]);
        Tape tape;
        std::vector<NodeId> param_ids;
        NodeId xin = tape.constant(x);
        NodeId z = head.encoder.forward_on(tape, xin, &param_ids);
        NodeId rec = head.decoder.forward_on(tape, z, &param_ids);
        NodeId loss = recon_loss(tape, rec, xin);
        tape.backward(loss);
        std::vector<const Matrix*> grads;
        for (NodeId id : param_ids) grads.push_back(&tape.grad(id));
        adams[h].step(params, grads);
      }
    }
    history.push_back(record_epoch(epoch));
  }
  return history;
}

std::vector<CorrectorModel::Example> CorrectorModel::collect_examples(
    const std::vector<SequenceRecord>& records, int* skipped) const {
  // keyed by matrix id; every head must be present exactly once
  std::map<std::string, std::map<EstimatorKind, const SequenceRecord*>> by_matrix;
  for (const SequenceRecord& r : records) by_matrix[r.matrix_id][r.kind] = &r;
  std::vector<Example> examples;
  int n_skipped = 0;
  for (const auto& [mid, seqs] : by_matrix) {
    Example ex;
    bool complete = true;
    for (const CorrectorHead& head : heads_) {
      auto it = seqs.find(head.kind);
      if (it == seqs.end()) {
        complete = false;
        break;
      }
      ex.per_head.push_back(apply_feature_stats(stats_, head.kind, it->second->sequence));
      ex.label = it->second->true_tc;
    }
    if (complete) {
      examples.push_back(std::move(ex));
    } else {
      ++n_skipped;
    }
  }
  if (skipped) *skipped = n_skipped;
  return examples;
}

double CorrectorModel::predict_normalized(
    const std::vector<std::array<double, kSequencePoints>>& per_head) const {
  Eigen::Index width = 0;
  for (const CorrectorHead& head : heads_) width += head.encoder.output_dim();
  Matrix cat(1, width);
  Eigen::Index at = 0;
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    Matrix x(1, kSequencePoints);
    for (int p = 0; p < kSequencePoints; ++p) x(0, p) = per_head[h][p];
    Matrix z = heads_[h].encoder.forward(x);
    cat.middleCols(at, z.cols()) = z;
    at += z.cols();
  }
  return regressor_.forward(cat)(0, 0);
}

double CorrectorModel::regression_loss_value(const std::vector<Example>& examples) const {
  double acc = 0.0;
  for (const Example& ex : examples) {
    const double d = predict_normalized(ex.per_head) - ex.label;
    acc += cfg_.loss == LossKind::kMse ? d * d : std::abs(d);
  }
  return acc / static_cast<double>(examples.size());
}

std::vector<EpochLoss> CorrectorModel::finetune(const std::vector<SequenceRecord>& train_records,
                                                std::uint64_t seed,
                                                const std::vector<SequenceRecord>* test_records) {
  if (!stats_ready_) throw std::logic_error("CorrectorModel::finetune: fit_feature_stats first");
  finetune_seed_ = seed;
  std::vector<Example> examples = collect_examples(train_records, &skipped_finetune_);
  if (examples.empty()) {
    throw std::invalid_argument("CorrectorModel::finetune: no complete training examples");
  }
  std::vector<Example> test_examples;
  if (test_records) {
    int ignored = 0;
    test_examples = collect_examples(*test_records, &ignored);
  }

  std::vector<Matrix*> params;
  for (CorrectorHead& head : heads_) {
    for (Matrix* p : head.encoder.params()) params.push_back(p);
    for (Matrix* p : head.decoder.params()) params.push_back(p);
  }
  for (Matrix* p : regressor_.params()) params.push_back(p);
  nn::Adam adam({cfg_.lr});
  Rng shuffle_rng(derive_seed(seed, {0x66696e65u}));
  const int n = static_cast<int>(examples.size());

  // one full-set evaluation per epoch keeps the Eq.-style breakdown honest:
  // loss_total is computed as the sum of the recorded parts
  auto record_epoch = [&](int epoch) {
    EpochLoss e;
    e.epoch = epoch;
    for (std::size_t h = 0; h < heads_.size(); ++h) {
      std::vector<const std::array<double, kSequencePoints>*> rows;
      for (const Example& ex : examples) rows.push_back(&ex.per_head[h]);
      Matrix x = rows_to_matrix(rows);
      Matrix rec = heads_[h].decoder.forward(heads_[h].encoder.forward(x));
      e.loss_pre.push_back((rec - x).squaredNorm() / static_cast<double>(x.size()));
    }
    e.loss_corr = regression_loss_value(examples);
    e.loss_total = e.loss_corr;
    for (double v : e.loss_pre) e.loss_total += v;
    e.test_corr = test_examples.empty() ? std::numeric_limits<double>::quiet_NaN()
                                        : regression_loss_value(test_examples);
    return e;
  };

  std::vector<EpochLoss> history;
  history.push_back(record_epoch(0));

  for (int epoch = 1; epoch <= cfg_.finetune_epochs; ++epoch) {
    std::vector<int> order = shuffle_rng.permutation(n);
    for (int at = 0; at < n; at += cfg_.batch) {
      const int b = std::min(cfg_.batch, n - at);
      Tape tape;
      std::vector<NodeId> param_ids;
      std::vector<NodeId> bottlenecks;
      std::vector<NodeId> pre_losses;
      Matrix labels(b, 1);
      for (int i = 0; i < b; ++i) labels(i, 0) = examples[order[at + i]].label;
      for (std::size_t h = 0; h < heads_.size(); ++h) {
        Matrix x(b, kSequencePoints);
        for (int i = 0; i < b; ++i) {
          const auto& seq = examples[order[at + i]].per_head[h];
          for (int p = 0; p < kSequencePoints; ++p) x(i, p) = seq[p];
        }
        NodeId xin = tape.constant(x);
        NodeId z = heads_[h].encoder.forward_on(tape, xin, &param_ids);
        NodeId rec = heads_[h].decoder.forward_on(tape, z, &param_ids);
        bottlenecks.push_back(z);
        pre_losses.push_back(recon_loss(tape, rec, xin));
      }
      NodeId cat = bottlenecks.size() == 1 ? bottlenecks[0] : tape.concat_cols(bottlenecks);
      NodeId pred = regressor_.forward_on(tape, cat, &param_ids);
      NodeId loss = regression_loss(tape, pred, tape.constant(labels), cfg_.loss);
      for (NodeId pre : pre_losses) loss = tape.add(loss, pre);
      tape.backward(loss);
      std::vector<const Matrix*> grads;
      std::vector<Matrix> zero_storage;
      grads.reserve(param_ids.size());
      for (std::size_t i = 0; i < param_ids.size(); ++i) {
        const Matrix& g = tape.grad(param_ids[i]);
        if (g.size() == 0) {
          zero_storage.push_back(Matrix::Zero(params[i]->rows(), params[i]->cols()));
          grads.push_back(&zero_storage.back());
        } else {
          grads.push_back(&g);
        }
      }
      adam.step(params, grads);
    }
    history.push_back(record_epoch(epoch));
  }
  return history;
}

double CorrectorModel::predict(
    const std::map<EstimatorKind, std::array<double, kSequencePoints>>& sequences) const {
  if (sequences.size() != heads_.size()) {
    throw std::invalid_argument("CorrectorModel::predict: got " +
                                std::to_string(sequences.size()) + " sequences for " +
                                std::to_string(heads_.size()) + " heads");
  }
  std::vector<std::array<double, kSequencePoints>> per_head;
  for (const CorrectorHead& head : heads_) {
    auto it = sequences.find(head.kind);
    if (it == sequences.end()) {
      throw std::invalid_argument("CorrectorModel::predict: missing sequence for head " +
                                  kind_name(head.kind));
    }
    for (double v : it->second) {
      if (!std::isfinite(v)) {
        throw std::invalid_argument("CorrectorModel::predict: non-finite sequence value");
      }
    }
    per_head.push_back(apply_feature_stats(stats_, head.kind, it->second));
  }
  return predict_normalized(per_head);
}

EvalResult CorrectorModel::evaluate(const std::vector<SequenceRecord>& test_records) const {
  if (test_records.empty()) throw std::invalid_argument("CorrectorModel::evaluate: no records");
  EvalResult result;
  std::vector<Example> examples = collect_examples(test_records, &result.skipped_examples);
  std::map<int, std::vector<double>> errs_by_level;  // prediction - truth
  std::vector<double> errs_all;
  for (const Example& ex : examples) {
    const double pred = predict_normalized(ex.per_head);
    const double err = pred - ex.label;
    errs_by_level[static_cast<int>(std::llround(ex.label))].push_back(err);
    errs_all.push_back(err);
  }
  auto metrics = [](int level, const std::vector<double>& errs) {
    LevelMetrics m;
    m.level = level;
    m.count = static_cast<int>(errs.size());
    for (double e : errs) {
      m.mae += std::abs(e);
      m.mse += e * e;
      m.bias += e;
    }
    if (m.count > 0) {
      m.mae /= m.count;
      m.mse /= m.count;
      m.bias /= m.count;
    }
    return m;
  };
  for (const auto& [level, errs] : errs_by_level) {
    result.per_level.push_back(metrics(level, errs));
  }
  result.aggregate = metrics(-1, errs_all);
  return result;
}

std::string CorrectorModel::to_json_string() const {
  nlohmann::json j;
  nlohmann::json heads = nlohmann::json::array();
  for (const CorrectorHead& head : heads_) {
    nlohmann::json hj;
    hj["kind"] = kind_name(head.kind);
    hj["encoder"] = nlohmann::json::parse(nn::net_to_json_string(head.encoder));
    hj["decoder"] = nlohmann::json::parse(nn::net_to_json_string(head.decoder));
    heads.push_back(std::move(hj));
  }
  j["heads"] = std::move(heads);
  j["regressor"] = nlohmann::json::parse(nn::net_to_json_string(regressor_));
  j["loss_kind"] = loss_name(cfg_.loss);
  nlohmann::json stats;
  for (const auto& [kind, m] : stats_.per_kind) {
    stats[kind_name(kind)] = {{"mean", m.mean}, {"stdev", m.stdev}};
  }
  j["feature_stats"] = std::move(stats);
  j["training_meta"] = {{"init_seed", init_seed_},
                        {"pretrain_seed", pretrain_seed_},
                        {"finetune_seed", finetune_seed_},
                        {"pretrain_epochs", cfg_.pretrain_epochs},
                        {"finetune_epochs", cfg_.finetune_epochs},
                        {"batch", cfg_.batch},
                        {"lr", cfg_.lr}};
  return j.dump(2) + "\n";
}

CorrectorModel CorrectorModel::from_json_string(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  CorrectorModel model;
  for (const auto& hj : j.at("heads")) {
    CorrectorHead head;
    head.kind = kind_from_name(hj.at("kind").get<std::string>());
    head.encoder = nn::net_from_json_string(hj.at("encoder").dump());
    head.decoder = nn::net_from_json_string(hj.at("decoder").dump());
    if (head.encoder.input_dim() != kSequencePoints ||
        head.decoder.output_dim() != kSequencePoints) {
      throw std::invalid_argument("corrector model: head sequence width must be " +
                                  std::to_string(kSequencePoints));
    }
    if (head.encoder.output_dim() >= head.encoder.input_dim()) {
      throw std::invalid_argument("corrector model: bottleneck is not under-complete");
    }
    model.heads_.push_back(std::move(head));
  }
  if (model.heads_.empty()) throw std::invalid_argument("corrector model: no heads");
  model.regressor_ = nn::net_from_json_string(j.at("regressor").dump());
  model.cfg_.loss = loss_from_name(j.at("loss_kind").get<std::string>());
  model.cfg_.encoder_dims = model.heads_.front().encoder.layer_dims;
  const auto& meta = j.at("training_meta");
  model.cfg_.pretrain_epochs = meta.at("pretrain_epochs").get<int>();
  model.cfg_.finetune_epochs = meta.at("finetune_epochs").get<int>();
  model.cfg_.batch = meta.at("batch").get<int>();
  model.cfg_.lr = meta.at("lr").get<double>();
  model.init_seed_ = meta.at("init_seed").get<std::uint64_t>();
  model.pretrain_seed_ = meta.at("pretrain_seed").get<std::uint64_t>();
  model.finetune_seed_ = meta.at("finetune_seed").get<std::uint64_t>();
  for (const auto& [name, m] : j.at("feature_stats").items()) {
    FeatureStats::Moments moments;
    const auto mean = m.at("mean").get<std::vector<double>>();
    const auto stdev = m.at("stdev").get<std::vector<double>>();
    if (mean.size() != kSequencePoints || stdev.size() != kSequencePoints) {
      throw std::invalid_argument("corrector model: feature stats width mismatch");
    }
    std::copy(mean.begin(), mean.end(), moments.mean.begin());
    std::copy(stdev.begin(), stdev.end(), moments.stdev.begin());
    model.stats_.per_kind[kind_from_name(name)] = moments;
  }
  model.stats_ready_ = !model.stats_.per_kind.empty();
  return model;
}

}  // namespace tclab
