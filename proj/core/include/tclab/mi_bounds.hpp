#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tclab/nn.hpp"

namespace tclab {

enum class EstimatorKind { kMine, kNwj, kInfoNce, kClub };

inline constexpr std::array<EstimatorKind, 4> kAllEstimatorKinds = {
    EstimatorKind::kMine, EstimatorKind::kNwj, EstimatorKind::kInfoNce, EstimatorKind::kClub};

std::string kind_name(EstimatorKind kind);
EstimatorKind kind_from_name(const std::string& name);

// Row-aligned joint samples plus a within-batch shuffle of y standing in for
// product-of-marginals draws.
struct PairedBatch {
  nn::Matrix x;
  nn::Matrix y;
  nn::Matrix y_shuffled;
};

// Derangement of {0..b-1}: Fisher-Yates followed by a fixed-point sweep.
// Deterministic per seed; b = 2 always swaps.
std::vector<int> negative_permutation(int b, std::uint64_t seed);

// Applies negative_permutation to the rows of y. Throws for b < 2.
nn::Matrix make_negatives(const nn::Matrix& y, std::uint64_t seed);

// Assembles a PairedBatch by column selection from a sample matrix.
PairedBatch make_paired_batch(const nn::Matrix& data, const std::vector<int>& x_indices,
                              const std::vector<int>& y_indices, std::uint64_t negative_seed);

struct EstimatorConfig {
  int hidden = 32;             // width of the two hidden layers
  double lr = 1e-3;
  int batch = 32;
  double mine_ema_rate = 0.99; // moving-average rate for MINE's denominator
};

class EstimatorDivergence : public std::runtime_error {
 public:
  EstimatorDivergence(EstimatorKind kind, long step, const std::string& message)
      : std::runtime_error("estimator " + kind_name(kind) + " diverged at step " +
                           std::to_string(step) + ": " + message),
        kind(kind),
        step(step) {}
  EstimatorKind kind;
  long step;
};

struct StepResult {
  double loss = 0.0;   // -bound for the lower bounds, negative log-likelihood for CLUB
  double bound = 0.0;  // the per-batch MI bound value in nats
};

// One trainable MI bound. MINE, NWJ and InfoNCE share a concatenated-input
// critic net; CLUB holds a diagonal-Gaussian variational conditional built
// from mean and log-variance nets. Bound formulas, per batch:
//   MINE     mean_joint[T] - log mean_neg[e^T]
//   NWJ      mean_joint[T] - mean_neg[e^(T-1)]
//   InfoNCE  mean_i [ T(x_i,y_i) - log( (1/B) sum_j e^T(x_i,y_j) ) ]
//   CLUB     mean_joint[log q(y|x)] - mean_neg[log q(y'|x)]
// MINE's log-term gradient uses an exponential moving average of the
// denominator; the reported bound does not.
class MiEstimator {
 public:
  MiEstimator(EstimatorKind kind, int x_dim, int y_dim, const EstimatorConfig& cfg,
              std::uint64_t seed);

  // Bound on the given batch with the current parameters; no update.
  double bound_value(const PairedBatch& batch) const;

  // One optimizer step on the batch. Throws EstimatorDivergence if the bound
  // or loss turns non-finite after clamping.
  StepResult train_step(const PairedBatch& batch);

  EstimatorKind kind() const { return kind_; }
  int x_dim() const { return x_dim_; }
  int y_dim() const { return y_dim_; }
  long steps() const { return steps_; }
  double ema_denominator() const { return ema_; }
  const EstimatorConfig& config() const { return cfg_; }

  std::string to_json_string() const;
  static MiEstimator from_json_string(const std::string& text);

 private:
  MiEstimator() = default;
  void check_batch(const PairedBatch& batch) const;

  EstimatorKind kind_ = EstimatorKind::kMine;
  int x_dim_ = 0;
  int y_dim_ = 0;
  EstimatorConfig cfg_;
  nn::MlpNet critic_;      // lower bounds
  nn::MlpNet club_mu_;     // CLUB only
  nn::MlpNet club_logvar_;
  nn::Adam adam_;
  double ema_ = 0.0;
  bool ema_ready_ = false;
  long steps_ = 0;
};

}  // namespace tclab
