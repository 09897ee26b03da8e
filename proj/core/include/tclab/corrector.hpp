#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tclab/dataset.hpp"
#include "tclab/nn.hpp"

namespace tclab {

enum class LossKind { kMse, kL1 };

std::string loss_name(LossKind kind);
LossKind loss_from_name(const std::string& name);

struct CorrectorConfig {
  std::vector<int> encoder_dims = {kSequencePoints, 16, 8};  // decoder mirrors this
  std::vector<int> regressor_hidden = {32, 16};
  LossKind loss = LossKind::kMse;
  int pretrain_epochs = 200;
  int finetune_epochs = 300;
  int batch = 64;
  double lr = 1e-3;
};

struct CorrectorHead {
  EstimatorKind kind = EstimatorKind::kMine;
  nn::MlpNet encoder;  // 30 -> ... -> bottleneck
  nn::MlpNet decoder;  // bottleneck -> ... -> 30
};

struct EpochLoss {
  int epoch = 0;
  std::vector<double> loss_pre;  // one per head, train-set reconstruction
  double loss_corr = 0.0;        // train-set regression loss (0 during pretrain)
  double loss_total = 0.0;       // sum of the parts, the joint objective
  double test_corr = 0.0;        // NaN when no test set was supplied
};

struct LevelMetrics {
  int level = 0;  // rounded true TC; -1 for the aggregate row
  int count = 0;
  double mae = 0.0;
  double mse = 0.0;
  double bias = 0.0;  // mean(prediction - truth)
};

struct EvalResult {
  std::vector<LevelMetrics> per_level;
  LevelMetrics aggregate;
  int skipped_examples = 0;  // matrix ids missing a head sequence
};

// Loss-sequence corrector: one under-complete autoencoder per estimator head
// feeding a shared MLP regressor that outputs a scalar TC. Trained in two
// stages; the fine-tune objective keeps the reconstruction terms alongside
// the regression term, and gradients reach encoders, decoders and regressor.
// Inference is a pure function of the input sequences.
class CorrectorModel {
 public:
  static CorrectorModel init(const std::vector<EstimatorKind>& head_kinds,
                             const CorrectorConfig& cfg, std::uint64_t seed);

  // Fits per-head normalization statistics; must run before training.
  void fit_feature_stats(const std::vector<SequenceRecord>& train_records);

  // Stage 1: trains each head's autoencoder on its own records. The first
  // history entry is the untrained epoch-0 loss. Throws when a head has no
  // matching records.
  std::vector<EpochLoss> pretrain(const std::vector<SequenceRecord>& train_records,
                                  std::uint64_t seed);

  // Stage 2: joint objective sum(recon per head) + regression loss over
  // examples that supply every head for the same matrix_id; incomplete
  // matrix ids are skipped and counted.
  std::vector<EpochLoss> finetune(const std::vector<SequenceRecord>& train_records,
                                  std::uint64_t seed,
                                  const std::vector<SequenceRecord>* test_records = nullptr);

  // Raw (un-normalized) sequences, one per head, in any order.
  double predict(const std::map<EstimatorKind, std::array<double, kSequencePoints>>& sequences) const;

  EvalResult evaluate(const std::vector<SequenceRecord>& test_records) const;

  const std::vector<CorrectorHead>& heads() const { return heads_; }
  const nn::MlpNet& regressor() const { return regressor_; }
  nn::MlpNet& mutable_regressor() { return regressor_; }
  const CorrectorConfig& config() const { return cfg_; }
  const FeatureStats& feature_stats() const { return stats_; }
  int skipped_in_last_finetune() const { return skipped_finetune_; }

  std::string to_json_string() const;
  static CorrectorModel from_json_string(const std::string& text);

 private:
  CorrectorModel() = default;

  struct Example {
    std::vector<std::array<double, kSequencePoints>> per_head;  // normalized, head order
    double label = 0.0;
  };
  std::vector<Example> collect_examples(const std::vector<SequenceRecord>& records,
                                        int* skipped) const;
  double regression_loss_value(const std::vector<Example>& examples) const;
  double predict_normalized(const std::vector<std::array<double, kSequencePoints>>& per_head) const;

  std::vector<CorrectorHead> heads_;
  nn::MlpNet regressor_;
  CorrectorConfig cfg_;
  FeatureStats stats_;
  bool stats_ready_ = false;
  std::uint64_t init_seed_ = 0;
  std::uint64_t pretrain_seed_ = 0;
  std::uint64_t finetune_seed_ = 0;
  int skipped_finetune_ = 0;
};

}  // namespace tclab
