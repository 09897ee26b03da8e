#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tclab/corrector.hpp"
#include "tclab/dataset.hpp"

namespace tclab {

// Product-moment correlation; throws std::domain_error on a constant vector.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Pearson correlation of average-ranked data (ties get the mean rank).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct BiasCorrelationCell {
  EstimatorKind kind = EstimatorKind::kMine;
  int level = 0;
  double spearman_rho = 0.0;
  double pearson_r = 0.0;
  int n_specs = 0;
  double mean_abs_error = 0.0;
  bool flagged = false;  // too many divergences or an undefined coefficient
};

struct BiasCorrelationReport {
  std::vector<BiasCorrelationCell> cells;
  std::uint64_t seed = 0;
  std::string scale = "desk";
};

// Coefficients between third-term proportion and absolute estimation error,
// per (kind, level), from completed dim-4 tree run summaries. Levels where
// more than half the runs diverged (or fewer than 3 survive) are flagged and
// their coefficients omitted.
BiasCorrelationReport bias_correlation_from_summaries(const std::vector<RunSummary>& summaries,
                                                      std::uint64_t seed,
                                                      const std::string& scale);

struct ExperimentConfig {
  TcRunConfig run;
  int jobs = 1;
  std::string scale = "desk";
  int dim = 4;
};

// Full protocol: specs_per_level fresh matrices per level, one tree run per
// (spec, kind), coefficients per (kind, level).
BiasCorrelationReport bias_correlation_experiment(const std::vector<EstimatorKind>& kinds,
                                                  const std::vector<double>& tc_levels,
                                                  int specs_per_level, std::uint64_t seed,
                                                  const ExperimentConfig& cfg);

std::string bias_correlation_to_csv(const BiasCorrelationReport& report);
// One plot table per coefficient, level rows by kind columns ("spearman"/"pearson").
std::string correlation_pivot_csv(const BiasCorrelationReport& report, const std::string& which);

struct BiasVarianceRow {
  int level = 0;
  EstimatorKind kind = EstimatorKind::kMine;
  double estimator_bias = 0.0;
  double estimator_variance = 0.0;
  double corrector_bias = 0.0;          // NaN when no model/test data for the kind
  double corrector_pred_variance = 0.0; // repeated inference on a fixed sequence
  int n_runs = 0;
};

struct BiasVarianceReport {
  std::vector<BiasVarianceRow> rows;
  std::uint64_t seed = 0;
  std::string scale = "desk";
};

// Estimator bias/variance over `repetitions` fresh specs per level, next to
// the corrector's bias on held-out sequences. repetitions must be >= 5.
BiasVarianceReport bias_variance_experiment(
    const std::vector<EstimatorKind>& kinds,
    const std::map<EstimatorKind, const CorrectorModel*>& models,
    const std::vector<SequenceRecord>& test_records, const std::vector<double>& tc_levels,
    int repetitions, std::uint64_t seed, const ExperimentConfig& cfg);

std::string bias_variance_to_csv(const BiasVarianceReport& report);

struct RobustnessRow {
  int level = 0;  // -1 for the masked-range aggregate
  LossKind loss = LossKind::kMse;
  EstimatorKind kind = EstimatorKind::kMine;
  double corrector_mae = 0.0;
  double pure_mae = 0.0;
  int count = 0;
};

struct RobustnessReport {
  std::vector<RobustnessRow> rows;
  std::uint64_t seed = 0;
  std::string scale = "desk";
  int repetitions = 1;
};

// Masked-training-range protocol: correctors trained on records below the
// mask, compared against pure estimators on the masked range, under both
// fine-tune losses. Corrector MAEs are averaged over `repetitions` trainings.
RobustnessReport robustness_experiment(const std::vector<SequenceRecord>& records,
                                       const std::vector<EstimatorKind>& kinds,
                                       const CorrectorConfig& base_cfg, std::uint64_t seed,
                                       int repetitions = 3);

std::string robustness_to_csv(const RobustnessReport& report);

}  // namespace tclab
