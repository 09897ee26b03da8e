#include "tclab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "tclab/parallel.hpp"
#include "tclab/rng.hpp"
#include "tclab/text.hpp"

namespace tclab {

std::array<double, kSequencePoints> downsample_trace(const std::vector<double>& total_trace) {
  if (total_trace.empty() || total_trace.size() % kSequencePoints != 0) {
    throw std::invalid_argument("downsample_trace: trace length must be a positive multiple of " +
                                std::to_string(kSequencePoints));
  }
  const std::size_t window = total_trace.size() / kSequencePoints;
  std::array<double, kSequencePoints> seq{};
  for (int w = 0; w < kSequencePoints; ++w) {
    double acc = 0.0;
    for (std::size_t i = 0; i < window; ++i) acc += total_trace[w * window + i];
    seq[w] = acc / static_cast<double>(window);
  }
  return seq;
}

double pure_estimate_from_sequence(const SequenceRecord& rec) {
  constexpr int kTailWindows = kSequencePoints / 10;
  double acc = 0.0;
  for (int w = kSequencePoints - kTailWindows; w < kSequencePoints; ++w) acc += rec.sequence[w];
  return acc / kTailWindows;
}

GenerationResult generate_records(const std::vector<GaussianSpec>& specs,
                                  const std::vector<EstimatorKind>& kinds,
                                  const DatasetGenConfig& cfg, std::uint64_t seed) {
  if (kinds.empty()) throw std::invalid_argument("generate_records: kinds must be non-empty");
  if (cfg.run.iters % kSequencePoints != 0) {
    throw std::invalid_argument("generate_records: iters must be a multiple of " +
                                std::to_string(kSequencePoints));
  }
  const int n_specs = static_cast<int>(specs.size());
  const int n_kinds = static_cast<int>(kinds.size());
  const int n_runs = n_specs * n_kinds;

  struct Slot {
    SequenceRecord record;
    RunSummary summary;
    bool dropped = false;
  };
  std::vector<Slot> slots(n_runs);

  parallel_for(n_runs, cfg.jobs, [&](int task) {
    const int spec_idx = task / n_kinds;
    const int kind_idx = task % n_kinds;
    const GaussianSpec& spec = specs[spec_idx];
    const EstimatorKind kind = kinds[kind_idx];
    const std::uint64_t run_seed =
        derive_seed(seed, {0x72756e73u, static_cast<std::uint64_t>(spec_idx),
                           static_cast<std::uint64_t>(kind_idx)});
    DecompositionPlan plan = build_plan(cfg.path, spec.dim);
    TcEstimatorRun run = estimate_tc(spec, plan, kind, cfg.run, run_seed);
    if (!cfg.trace_dir.empty()) {
      save_trace_csv(cfg.trace_dir + "/" + spec.id + "_" + kind_name(kind) + ".csv", run);
    }

    Slot& slot = slots[task];
    slot.summary.matrix_id = spec.id;
    slot.summary.kind = kind;
    slot.summary.true_tc = spec.true_tc;
    slot.summary.diverged = run.failed;
    slot.summary.failed_iteration = run.failed_iteration;
    if (run.failed) {
      slot.dropped = true;
      slot.summary.final_estimate = std::numeric_limits<double>::quiet_NaN();
      slot.summary.third_term_prop = std::numeric_limits<double>::quiet_NaN();
      return;
    }
    slot.summary.final_estimate = run.final_estimate;
    slot.summary.third_term_prop = std::numeric_limits<double>::quiet_NaN();
    if (plan.path_kind == PathKind::kTree && plan.dim == 4 && run.final_estimate != 0.0) {
      slot.summary.third_term_prop = third_term_proportion(run);
    }
    slot.record.matrix_id = spec.id;
    slot.record.kind = kind;
    slot.record.true_tc = spec.true_tc;
    slot.record.run_seed = run_seed;
    slot.record.sequence = downsample_trace(run.total_trace);
    for (double v : slot.record.sequence) {
      if (!std::isfinite(v)) {
        slot.dropped = true;  // non-finite windows must not reach the corrector
        break;
      }
    }
  });

  GenerationResult out;
  out.records.reserve(n_runs);
  out.summaries.reserve(n_runs);
  for (Slot& slot : slots) {
    out.summaries.push_back(std::move(slot.summary));
    if (slot.dropped) {
      ++out.dropped;
    } else {
      out.records.push_back(std::move(slot.record));
    }
  }
  return out;
}

GenerationResult generate_dataset(const std::vector<double>& tc_levels, int specs_per_level,
                                  const std::vector<EstimatorKind>& kinds, int iters,
                                  std::uint64_t seed, int jobs, int dim) {
  if (specs_per_level < 1) {
    throw std::invalid_argument("generate_dataset: specs_per_level must be >= 1");
  }
  std::vector<GaussianSpec> specs;
  specs.reserve(tc_levels.size() * static_cast<std::size_t>(specs_per_level));
  int index = 0;
  for (std::size_t li = 0; li < tc_levels.size(); ++li) {
    for (int s = 0; s < specs_per_level; ++s) {
      GaussianSpec spec = gen_spec_with_target_tc(
          dim, tc_levels[li],
          derive_seed(seed, {0x73706563u, static_cast<std::uint64_t>(li),
                             static_cast<std::uint64_t>(s)}));
      spec.id = "m" + std::to_string(index++);
      specs.push_back(std::move(spec));
    }
  }
  DatasetGenConfig cfg;
  cfg.run.iters = iters;
  cfg.jobs = jobs;
  return generate_records(specs, kinds, cfg, derive_seed(seed, {0x64617461u}));
}

std::string split_name(SplitKind kind) {
  switch (kind) {
    case SplitKind::kRatio37: return "ratio37";
    case SplitKind::kRatio46: return "ratio46";
    case SplitKind::kTcMask610: return "tc_mask_6_10";
  }
  throw std::invalid_argument("bad SplitKind");
}

SplitKind split_from_name(const std::string& name) {
  if (name == "ratio37") return SplitKind::kRatio37;
  if (name == "ratio46") return SplitKind::kRatio46;
  if (name == "tc_mask_6_10") return SplitKind::kTcMask610;
  throw std::invalid_argument("unknown split kind: " + name);
}

DatasetSplit split_dataset(const std::vector<SequenceRecord>& records, SplitKind kind,
                           std::uint64_t seed) {
  if (records.empty()) throw std::invalid_argument("split_dataset: no records");
  DatasetSplit split;
  split.split_kind = kind;
  split.seed = seed;
  if (kind == SplitKind::kTcMask610) {
    for (const SequenceRecord& r : records) {
      (r.true_tc < 5.5 ? split.train : split.test).push_back(r);
    }
    if (split.train.empty()) {
      throw std::invalid_argument("split_dataset: tc mask leaves the training side empty");
    }
    return split;
  }
  const double train_share = kind == SplitKind::kRatio37 ? 0.7 : 0.6;
  Rng rng(derive_seed(seed, {0x73706c69u}));
  std::vector<int> order = rng.permutation(static_cast<int>(records.size()));
  const int n_train = static_cast<int>(std::llround(train_share * records.size()));
  for (std::size_t i = 0; i < order.size(); ++i) {
    (static_cast<int>(i) < n_train ? split.train : split.test).push_back(records[order[i]]);
  }
  return split;
}

FeatureStats fit_feature_stats(const std::vector<SequenceRecord>& records) {
  constexpr double kVarFloor = 1e-24;
  FeatureStats stats;
  std::map<EstimatorKind, std::vector<const SequenceRecord*>> by_kind;
  for (const SequenceRecord& r : records) by_kind[r.kind].push_back(&r);
  for (const auto& [kind, rs] : by_kind) {
    FeatureStats::Moments m;
    const double n = static_cast<double>(rs.size());
    for (int p = 0; p < kSequencePoints; ++p) {
      double mean = 0.0;
      for (const SequenceRecord* r : rs) mean += r->sequence[p];
      mean /= n;
      double var = 0.0;
      for (const SequenceRecord* r : rs) {
        const double d = r->sequence[p] - mean;
        var += d * d;
      }
      var /= n;
      if (var <= kVarFloor) {
        m.mean[p] = 0.0;
        m.stdev[p] = 0.0;  // passthrough
      } else {
        m.mean[p] = mean;
        m.stdev[p] = std::sqrt(var);
      }
    }
    stats.per_kind[kind] = m;
  }
  return stats;
}

std::array<double, kSequencePoints> apply_feature_stats(
    const FeatureStats& stats, EstimatorKind kind,
    const std::array<double, kSequencePoints>& seq) {
  auto it = stats.per_kind.find(kind);
  if (it == stats.per_kind.end()) {
    throw std::invalid_argument("apply_feature_stats: no statistics for kind " + kind_name(kind));
  }
  std::array<double, kSequencePoints> out{};
  for (int p = 0; p < kSequencePoints; ++p) {
    out[p] = it->second.stdev[p] == 0.0
                 ? seq[p]
                 : (seq[p] - it->second.mean[p]) / it->second.stdev[p];
  }
  return out;
}

std::vector<SequenceRecord> normalize_features(const std::vector<SequenceRecord>& records,
                                               const FeatureStats& stats) {
  std::vector<SequenceRecord> out = records;
  for (SequenceRecord& r : out) r.sequence = apply_feature_stats(stats, r.kind, r.sequence);
  return out;
}

std::string dataset_to_csv(const std::vector<SequenceRecord>& records) {
  std::ostringstream out;
  out << "matrix_id,estimator,true_tc,run_seed";
  for (int p = 0; p < kSequencePoints; ++p) {
    out << ",s" << (p < 10 ? "0" : "") << p;
  }
  out << '\n';
  for (const SequenceRecord& r : records) {
    out << r.matrix_id << ',' << kind_name(r.kind) << ',' << format_double(r.true_tc) << ','
        << r.run_seed;
    for (double v : r.sequence) out << ',' << format_double(v);
    out << '\n';
  }
  return out.str();
}

std::vector<SequenceRecord> dataset_from_csv(const std::string& text) {
  std::vector<SequenceRecord> records;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("dataset csv: empty file");
  const auto header = split(line, ',');
  if (header.size() != 4 + kSequencePoints || header[0] != "matrix_id") {
    throw std::invalid_argument("dataset csv: unexpected header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 4 + kSequencePoints) {
      throw std::invalid_argument("dataset csv: row with " + std::to_string(f.size()) + " fields");
    }
    SequenceRecord r;
    r.matrix_id = f[0];
    r.kind = kind_from_name(f[1]);
    r.true_tc = parse_double(f[2]);
    r.run_seed = static_cast<std::uint64_t>(parse_ulong(f[3]));
    for (int p = 0; p < kSequencePoints; ++p) r.sequence[p] = parse_double(f[4 + p]);
    records.push_back(std::move(r));
  }
  return records;
}

void save_dataset_csv(const std::string& path, const std::vector<SequenceRecord>& records) {
  write_file(path, dataset_to_csv(records));
}

std::vector<SequenceRecord> load_dataset_csv(const std::string& path) {
  return dataset_from_csv(read_file(path));
}

}  // namespace tclab
