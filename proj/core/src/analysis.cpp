#include "tclab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "tclab/parallel.hpp"
#include "tclab/rng.hpp"
#include "tclab/text.hpp"

namespace tclab {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

void check_pair(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("correlation: length mismatch");
  if (x.size() < 3) throw std::invalid_argument("correlation: need at least 3 points");
}

std::vector<double> average_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  check_pair(x, y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw std::domain_error("pearson: correlation undefined for a constant vector");
  }
  return sxy / std::sqrt(sxx * syy);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  check_pair(x, y);
  return pearson(average_ranks(x), average_ranks(y));
}

BiasCorrelationReport bias_correlation_from_summaries(const std::vector<RunSummary>& summaries,
                                                      std::uint64_t seed,
                                                      const std::string& scale) {
  struct Group {
    std::vector<double> proportion;
    std::vector<double> abs_error;
    int diverged = 0;
  };
  std::map<std::pair<int, int>, Group> groups;  // (kind index, level)
  for (const RunSummary& s : summaries) {
    const int level = static_cast<int>(std::llround(s.true_tc));
    Group& g = groups[{static_cast<int>(s.kind), level}];
    if (s.diverged || !std::isfinite(s.third_term_prop) || !std::isfinite(s.final_estimate)) {
      ++g.diverged;
      continue;
    }
    g.proportion.push_back(s.third_term_prop);
    g.abs_error.push_back(std::abs(s.final_estimate - s.true_tc));
  }
  BiasCorrelationReport report;
  report.seed = seed;
  report.scale = scale;
  for (const auto& [key, g] : groups) {
    BiasCorrelationCell cell;
    cell.kind = static_cast<EstimatorKind>(key.first);
    cell.level = key.second;
    cell.n_specs = static_cast<int>(g.proportion.size());
    cell.mean_abs_error = 0.0;
    for (double e : g.abs_error) cell.mean_abs_error += e;
    if (cell.n_specs > 0) cell.mean_abs_error /= cell.n_specs;
    const int total = cell.n_specs + g.diverged;
    if (cell.n_specs < 3 || g.diverged * 2 > total) {
      cell.flagged = true;
      cell.spearman_rho = kNan;
      cell.pearson_r = kNan;
    } else {
      try {
        cell.spearman_rho = spearman(g.proportion, g.abs_error);
        cell.pearson_r = pearson(g.proportion, g.abs_error);
      } catch (const std::domain_error&) {
        cell.flagged = true;
        cell.spearman_rho = kNan;
        cell.pearson_r = kNan;
      }
    }
    report.cells.push_back(cell);
  }
  return report;
}

BiasCorrelationReport bias_correlation_experiment(const std::vector<EstimatorKind>& kinds,
                                                  const std::vector<double>& tc_levels,
                                                  int specs_per_level, std::uint64_t seed,
                                                  const ExperimentConfig& cfg) {
  if (specs_per_level < 5) {
    throw std::invalid_argument("bias_correlation_experiment: need at least 5 specs per level");
  }
  std::vector<GaussianSpec> specs;
  int index = 0;
  for (std::size_t li = 0; li < tc_levels.size(); ++li) {
    for (int s = 0; s < specs_per_level; ++s) {
      GaussianSpec spec = gen_spec_with_target_tc(
          cfg.dim, tc_levels[li],
          derive_seed(seed, {0x62637370u, static_cast<std::uint64_t>(li),
                             static_cast<std::uint64_t>(s)}));
      spec.id = "m" + std::to_string(index++);
      specs.push_back(std::move(spec));
    }
  }
  DatasetGenConfig gen;
  gen.run = cfg.run;
  gen.path = PathKind::kTree;
  gen.jobs = cfg.jobs;
  GenerationResult result = generate_records(specs, kinds, gen, derive_seed(seed, {0x62637275u}));
  return bias_correlation_from_summaries(result.summaries, seed, cfg.scale);
}

namespace {

std::string report_header(std::uint64_t seed, const std::string& scale) {
  return "# seed=" + std::to_string(seed) + " scale=" + scale + "\n";
}

}  // namespace

std::string bias_correlation_to_csv(const BiasCorrelationReport& report) {
  std::ostringstream out;
  out << report_header(report.seed, report.scale);
  out << "level,kind,spearman_rho,pearson_r,n_specs,mean_abs_error,flagged\n";
  std::vector<BiasCorrelationCell> cells = report.cells;
  std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) {
    if (a.level != b.level) return a.level < b.level;
    return static_cast<int>(a.kind) < static_cast<int>(b.kind);
  });
  for (const auto& c : cells) {
    out << c.level << ',' << kind_name(c.kind) << ',' << format_double(c.spearman_rho) << ','
        << format_double(c.pearson_r) << ',' << c.n_specs << ','
        << format_double(c.mean_abs_error) << ',' << (c.flagged ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string correlation_pivot_csv(const BiasCorrelationReport& report, const std::string& which) {
  if (which != "spearman" && which != "pearson") {
    throw std::invalid_argument("correlation_pivot_csv: which must be spearman or pearson");
  }
  std::map<int, std::map<int, double>> table;  // level -> kind index -> value
  std::set<int> kind_ids;
  for (const auto& c : report.cells) {
    table[c.level][static_cast<int>(c.kind)] =
        which == "spearman" ? c.spearman_rho : c.pearson_r;
    kind_ids.insert(static_cast<int>(c.kind));
  }
  std::ostringstream out;
  out << report_header(report.seed, report.scale);
  out << "level";
  for (int k : kind_ids) out << ',' << kind_name(static_cast<EstimatorKind>(k));
  out << '\n';
  for (const auto& [level, row] : table) {
    out << level;
    for (int k : kind_ids) {
      auto it = row.find(k);
      out << ',' << format_double(it == row.end() ? kNan : it->second);
    }
    out << '\n';
  }
  return out.str();
}

BiasVarianceReport bias_variance_experiment(
    const std::vector<EstimatorKind>& kinds,
    const std::map<EstimatorKind, const CorrectorModel*>& models,
    const std::vector<SequenceRecord>& test_records, const std::vector<double>& tc_levels,
    int repetitions, std::uint64_t seed, const ExperimentConfig& cfg) {
  if (repetitions < 5) {
    throw std::invalid_argument("bias_variance_experiment: repetitions must be >= 5");
  }
  const int n_levels = static_cast<int>(tc_levels.size());
  const int n_kinds = static_cast<int>(kinds.size());
  const int n_tasks = n_levels * n_kinds * repetitions;
  struct TaskOut {
    double estimate = kNan;
    double truth = kNan;
    bool ok = false;
  };
  std::vector<TaskOut> outs(n_tasks);
  parallel_for(n_tasks, cfg.jobs, [&](int task) {
    const int level_idx = task / (n_kinds * repetitions);
    const int kind_idx = (task / repetitions) % n_kinds;
    const int rep = task % repetitions;
    GaussianSpec spec = gen_spec_with_target_tc(
        cfg.dim, tc_levels[level_idx],
        derive_seed(seed, {0x62767370u, static_cast<std::uint64_t>(level_idx),
                           static_cast<std::uint64_t>(rep)}));
    DecompositionPlan plan = build_plan(PathKind::kTree, cfg.dim);
    TcEstimatorRun run = estimate_tc(
        spec, plan, kinds[kind_idx], cfg.run,
        derive_seed(seed, {0x62767275u, static_cast<std::uint64_t>(task)}));
    if (!run.failed) {
      outs[task] = {run.final_estimate, spec.true_tc, true};
    }
  });

  BiasVarianceReport report;
  report.seed = seed;
  report.scale = cfg.scale;
  for (int li = 0; li < n_levels; ++li) {
    for (int ki = 0; ki < n_kinds; ++ki) {
      BiasVarianceRow row;
      row.level = static_cast<int>(std::llround(tc_levels[li]));
      row.kind = kinds[ki];
      std::vector<double> errors;
      std::vector<double> estimates;
      for (int rep = 0; rep < repetitions; ++rep) {
        const TaskOut& t = outs[(li * n_kinds + ki) * repetitions + rep];
        if (t.ok) {
          errors.push_back(t.estimate - t.truth);
          estimates.push_back(t.estimate);
        }
      }
      row.n_runs = static_cast<int>(errors.size());
      if (!errors.empty()) {
        double mean_err = 0.0;
        for (double e : errors) mean_err += e;
        mean_err /= errors.size();
        row.estimator_bias = mean_err;
        double mean_est = 0.0;
        for (double e : estimates) mean_est += e;
        mean_est /= estimates.size();
        double var = 0.0;
        for (double e : estimates) var += (e - mean_est) * (e - mean_est);
        row.estimator_variance = var / estimates.size();
      } else {
        row.estimator_bias = kNan;
        row.estimator_variance = kNan;
      }

      row.corrector_bias = kNan;
      row.corrector_pred_variance = kNan;
      auto model_it = models.find(kinds[ki]);
      if (model_it != models.end() && model_it->second != nullptr) {
        const CorrectorModel& model = *model_it->second;
        std::vector<double> corr_errors;
        const SequenceRecord* probe = nullptr;
        for (const SequenceRecord& r : test_records) {
          if (r.kind != kinds[ki] ||
              static_cast<int>(std::llround(r.true_tc)) != row.level) {
            continue;
          }
          const double pred = model.predict({{r.kind, r.sequence}});
          corr_errors.push_back(pred - r.true_tc);
          if (!probe) probe = &r;
        }
        if (!corr_errors.empty()) {
          double mean = 0.0;
          for (double e : corr_errors) mean += e;
          row.corrector_bias = mean / corr_errors.size();
        }
        if (probe) {
          // inference variance measured the literal way: repeat the call
          std::vector<double> preds;
          for (int i = 0; i < 10; ++i) preds.push_back(model.predict({{probe->kind, probe->sequence}}));
          double mean = 0.0;
          for (double p : preds) mean += p;
          mean /= preds.size();
          double var = 0.0;
          for (double p : preds) var += (p - mean) * (p - mean);
          row.corrector_pred_variance = var / preds.size();
        }
      }
      report.rows.push_back(row);
    }
  }
  return report;
}

std::string bias_variance_to_csv(const BiasVarianceReport& report) {
  std::ostringstream out;
  out << report_header(report.seed, report.scale);
  out << "level,kind,estimator_bias,estimator_variance,corrector_bias,corrector_pred_variance,"
         "n_runs\n";
  for (const auto& r : report.rows) {
    out << r.level << ',' << kind_name(r.kind) << ',' << format_double(r.estimator_bias) << ','
        << format_double(r.estimator_variance) << ',' << format_double(r.corrector_bias) << ','
        << format_double(r.corrector_pred_variance) << ',' << r.n_runs << '\n';
  }
  return out.str();
}

RobustnessReport robustness_experiment(const std::vector<SequenceRecord>& records,
                                       const std::vector<EstimatorKind>& kinds,
                                       const CorrectorConfig& base_cfg, std::uint64_t seed,
                                       int repetitions) {
  if (repetitions < 1) throw std::invalid_argument("robustness_experiment: repetitions must be >= 1");
  DatasetSplit split = split_dataset(records, SplitKind::kTcMask610, seed);

  RobustnessReport report;
  report.seed = seed;
  report.repetitions = repetitions;

  // pure estimator masked-range errors come straight from the records and do
  // not depend on any corrector below
  std::map<std::pair<int, int>, std::vector<double>> pure_errs;  // (kind, level)
  for (const SequenceRecord& r : split.test) {
    const int level = static_cast<int>(std::llround(r.true_tc));
    pure_errs[{static_cast<int>(r.kind), level}].push_back(
        std::abs(pure_estimate_from_sequence(r) - r.true_tc));
  }

  for (LossKind loss : {LossKind::kMse, LossKind::kL1}) {
    for (EstimatorKind kind : kinds) {
      // corrector MAE per level, averaged over training repetitions
      std::map<int, std::vector<double>> corr_mae_by_level;
      std::vector<double> corr_mae_aggregate;
      for (int rep = 0; rep < repetitions; ++rep) {
        CorrectorConfig cfg = base_cfg;
        cfg.loss = loss;
        CorrectorModel model = CorrectorModel::init(
            {kind}, cfg,
            derive_seed(seed, {0x726f6275u, static_cast<std::uint64_t>(loss),
                               static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(rep)}));
        model.fit_feature_stats(split.train);
        model.pretrain(split.train, derive_seed(seed, {0x70u, static_cast<std::uint64_t>(rep)}));
        model.finetune(split.train, derive_seed(seed, {0x66u, static_cast<std::uint64_t>(rep)}));
        EvalResult eval = model.evaluate(split.test);
        for (const LevelMetrics& m : eval.per_level) corr_mae_by_level[m.level].push_back(m.mae);
        corr_mae_aggregate.push_back(eval.aggregate.mae);
      }
      auto mean_of = [](const std::vector<double>& xs) {
        double acc = 0.0;
        for (double v : xs) acc += v;
        return xs.empty() ? kNan : acc / xs.size();
      };

      for (const auto& [level, maes] : corr_mae_by_level) {
        RobustnessRow row;
        row.level = level;
        row.loss = loss;
        row.kind = kind;
        row.corrector_mae = mean_of(maes);
        auto it = pure_errs.find({static_cast<int>(kind), level});
        row.pure_mae = it == pure_errs.end() ? kNan : mean_of(it->second);
        row.count = it == pure_errs.end() ? 0 : static_cast<int>(it->second.size());
        report.rows.push_back(row);
      }
      RobustnessRow agg;
      agg.level = -1;
      agg.loss = loss;
      agg.kind = kind;
      agg.corrector_mae = mean_of(corr_mae_aggregate);
      std::vector<double> all_pure;
      for (const auto& [key, errs] : pure_errs) {
        if (key.first == static_cast<int>(kind)) {
          all_pure.insert(all_pure.end(), errs.begin(), errs.end());
        }
      }
      agg.pure_mae = mean_of(all_pure);
      agg.count = static_cast<int>(all_pure.size());
      report.rows.push_back(agg);
    }
  }
  return report;
}

std::string robustness_to_csv(const RobustnessReport& report) {
  std::ostringstream out;
  out << report_header(report.seed, report.scale);
  out << "level,loss,kind,corrector_mae,pure_mae,count\n";
  for (const auto& r : report.rows) {
    out << r.level << ',' << loss_name(r.loss) << ',' << kind_name(r.kind) << ','
        << format_double(r.corrector_mae) << ',' << format_double(r.pure_mae) << ',' << r.count
        << '\n';
  }
  return out.str();
}

}  // namespace tclab
