#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tclab/decomp.hpp"

namespace tclab {

inline constexpr int kSequencePoints = 30;

// One CORR_Dataset row: the 30-point downsampled total-estimate trace of a
// single (matrix, estimator) run, labeled with the exact TC.
struct SequenceRecord {
  std::string matrix_id;
  EstimatorKind kind = EstimatorKind::kMine;
  double true_tc = 0.0;
  std::uint64_t run_seed = 0;
  std::array<double, kSequencePoints> sequence{};
};

// Per-run byproducts kept for the bias experiments; diverged runs appear
// here even though their records are dropped.
struct RunSummary {
  std::string matrix_id;
  EstimatorKind kind = EstimatorKind::kMine;
  double true_tc = 0.0;
  double final_estimate = 0.0;
  double third_term_prop = 0.0;  // dim-4 tree runs only, else NaN
  bool diverged = false;
  int failed_iteration = -1;
};

struct GenerationResult {
  std::vector<SequenceRecord> records;
  std::vector<RunSummary> summaries;
  int dropped = 0;
};

struct DatasetGenConfig {
  TcRunConfig run;                      // iters must be a multiple of kSequencePoints
  PathKind path = PathKind::kTree;
  int jobs = 1;
  std::string trace_dir;                // when set, per-run trace CSVs are written here
};

// Runs every (spec, kind) pair and downsamples each total-estimate trace to
// kSequencePoints window means. Record order is canonical (spec order, then
// kind order) regardless of jobs.
GenerationResult generate_records(const std::vector<GaussianSpec>& specs,
                                  const std::vector<EstimatorKind>& kinds,
                                  const DatasetGenConfig& cfg, std::uint64_t seed);

// Spec-level protocol: specs_per_level matrices at each tc level, run under
// every kind. |records| = |levels| * specs_per_level * |kinds| minus dropped
// divergences.
GenerationResult generate_dataset(const std::vector<double>& tc_levels, int specs_per_level,
                                  const std::vector<EstimatorKind>& kinds, int iters,
                                  std::uint64_t seed, int jobs = 1, int dim = 4);

// Window means of a raw trace; requires trace length == kSequencePoints * w.
std::array<double, kSequencePoints> downsample_trace(const std::vector<double>& total_trace);

// The pure estimator's point estimate recovered from a stored sequence: the
// mean of the last 10% of sequence windows, identical to the tail mean of
// the underlying iteration trace because windows have equal width.
double pure_estimate_from_sequence(const SequenceRecord& rec);

enum class SplitKind { kRatio37, kRatio46, kTcMask610 };

std::string split_name(SplitKind kind);
SplitKind split_from_name(const std::string& name);

struct DatasetSplit {
  std::vector<SequenceRecord> train;
  std::vector<SequenceRecord> test;
  SplitKind split_kind = SplitKind::kRatio37;
  std::uint64_t seed = 0;
};

// kRatio37: 70% of records in train; kRatio46: 60%; kTcMask610: records with
// true_tc < 5.5 in train, the rest in test. Deterministic per seed.
DatasetSplit split_dataset(const std::vector<SequenceRecord>& records, SplitKind kind,
                           std::uint64_t seed);

// Per-kind, per-position z-score statistics fitted on a training set.
// Positions with (near-)zero variance are passed through unscaled.
struct FeatureStats {
  struct Moments {
    std::array<double, kSequencePoints> mean{};
    std::array<double, kSequencePoints> stdev{};  // 0 marks a passthrough position
  };
  std::map<EstimatorKind, Moments> per_kind;
};

FeatureStats fit_feature_stats(const std::vector<SequenceRecord>& records);
std::array<double, kSequencePoints> apply_feature_stats(const FeatureStats& stats,
                                                        EstimatorKind kind,
                                                        const std::array<double, kSequencePoints>& seq);
std::vector<SequenceRecord> normalize_features(const std::vector<SequenceRecord>& records,
                                               const FeatureStats& stats);

// CSV: matrix_id,estimator,true_tc,run_seed,s00..s29; shortest round-trip
// float text, LF endings.
std::string dataset_to_csv(const std::vector<SequenceRecord>& records);
std::vector<SequenceRecord> dataset_from_csv(const std::string& text);
void save_dataset_csv(const std::string& path, const std::vector<SequenceRecord>& records);
std::vector<SequenceRecord> load_dataset_csv(const std::string& path);

}  // namespace tclab
