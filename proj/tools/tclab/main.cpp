// tclab: total-correlation estimation lab.
//
// Subcommands: gen-matrices, gen-dataset, train-corrector, predict,
// experiment, rerun. Every run writes its resolved configuration to
// <out-dir>/config.json; `tclab rerun <config.json>` reproduces the primary
// outputs byte for byte. Exit codes: 0 ok, 2 usage/config error, 3 runtime
// divergence beyond threshold.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tclab/analysis.hpp"
#include "tclab/corrector.hpp"
#include "tclab/dataset.hpp"
#include "tclab/decomp.hpp"
#include "tclab/gaussian.hpp"
#include "tclab/rng.hpp"
#include "tclab/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string default_out_dir() {
  const char* env = std::getenv("TC_LAB_OUT");
  return env && *env ? env : "out";
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create output directory " + dir + ": " + ec.message());
}

std::vector<double> parse_levels(const std::string& text) {
  std::vector<double> levels;
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const long lo = tclab::parse_long(text.substr(0, dots));
    const long hi = tclab::parse_long(text.substr(dots + 2));
    if (hi < lo) throw UsageError("bad level range: " + text);
    for (long v = lo; v <= hi; ++v) levels.push_back(static_cast<double>(v));
  } else {
    for (const std::string& part : tclab::split(text, ',')) {
      levels.push_back(tclab::parse_double(part));
    }
  }
  if (levels.empty()) throw UsageError("no levels in: " + text);
  return levels;
}

std::vector<tclab::EstimatorKind> parse_kinds(const std::string& text) {
  std::vector<tclab::EstimatorKind> kinds;
  for (const std::string& part : tclab::split(text, ',')) {
    kinds.push_back(tclab::kind_from_name(part));
  }
  std::set<tclab::EstimatorKind> uniq(kinds.begin(), kinds.end());
  if (uniq.size() != kinds.size()) throw UsageError("duplicate estimator kind in: " + text);
  return kinds;
}

int resolve_per_level(int per_level, const std::string& scale) {
  if (per_level > 0) return per_level;
  if (scale == "desk") return 20;
  if (scale == "full") return 200;
  throw UsageError("unknown scale preset: " + scale);
}

void write_config(const std::string& out_dir, const std::string& subcommand, const json& options) {
  json j;
  j["subcommand"] = subcommand;
  j["options"] = options;
  tclab::write_file(out_dir + "/config.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------- commands

struct GenMatricesOpts {
  int dim = 4;
  std::string levels = "1..10";
  int per_level = -1;
  std::string scale = "desk";
  std::uint64_t seed = 1;
  std::string out_dir = default_out_dir();
};

json to_json(const GenMatricesOpts& o) {
  return {{"dim", o.dim},      {"levels", o.levels},   {"per_level", o.per_level},
          {"scale", o.scale},  {"seed", o.seed},       {"out_dir", o.out_dir}};
}

GenMatricesOpts gen_matrices_from_json(const json& j) {
  GenMatricesOpts o;
  o.dim = j.at("dim").get<int>();
  o.levels = j.at("levels").get<std::string>();
  o.per_level = j.at("per_level").get<int>();
  o.scale = j.at("scale").get<std::string>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.out_dir = j.at("out_dir").get<std::string>();
  return o;
}

void run_gen_matrices(const GenMatricesOpts& opts) {
  const std::vector<double> levels = parse_levels(opts.levels);
  const int per_level = resolve_per_level(opts.per_level, opts.scale);
  ensure_dir(opts.out_dir);

  std::vector<tclab::GaussianSpec> specs;
  int index = 0;
  std::map<long, int> histogram;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    for (int s = 0; s < per_level; ++s) {
      tclab::GaussianSpec spec = tclab::gen_spec_with_target_tc(
          opts.dim, levels[li],
          tclab::derive_seed(opts.seed, {0x73706563u, static_cast<std::uint64_t>(li),
                                         static_cast<std::uint64_t>(s)}));
      spec.id = "m" + std::to_string(index++);
      ++histogram[std::llround(spec.true_tc)];
      specs.push_back(std::move(spec));
    }
  }
  tclab::save_matrices(opts.out_dir + "/matrices.json", specs);
  write_config(opts.out_dir, "gen-matrices", to_json(opts));

  std::cout << "wrote " << specs.size() << " specs to " << opts.out_dir << "/matrices.json; tc histogram:";
  for (const auto& [level, count] : histogram) std::cout << ' ' << level << ':' << count;
  std::cout << '\n';
}

struct GenDatasetOpts {
  std::string matrices;
  std::string kinds = "mine,nwj,infonce,club";
  std::string path = "tree";
  int iters = 3000;
  int batch = 32;
  int hidden = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  int jobs = 1;
  bool traces = false;
  std::string out_dir = default_out_dir();
};

json to_json(const GenDatasetOpts& o) {
  return {{"matrices", o.matrices}, {"kinds", o.kinds},   {"path", o.path},
          {"iters", o.iters},       {"batch", o.batch},   {"hidden", o.hidden},
          {"lr", o.lr},             {"seed", o.seed},     {"jobs", o.jobs},
          {"traces", o.traces},     {"out_dir", o.out_dir}};
}

GenDatasetOpts gen_dataset_from_json(const json& j) {
  GenDatasetOpts o;
  o.matrices = j.at("matrices").get<std::string>();
  o.kinds = j.at("kinds").get<std::string>();
  o.path = j.at("path").get<std::string>();
  o.iters = j.at("iters").get<int>();
  o.batch = j.at("batch").get<int>();
  o.hidden = j.at("hidden").get<int>();
  o.lr = j.at("lr").get<double>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.jobs = j.at("jobs").get<int>();
  o.traces = j.at("traces").get<bool>();
  o.out_dir = j.at("out_dir").get<std::string>();
  return o;
}

void run_gen_dataset(const GenDatasetOpts& opts) {
  if (!fs::exists(opts.matrices)) throw UsageError("matrices file not found: " + opts.matrices);
  const std::vector<tclab::GaussianSpec> specs = tclab::load_matrices(opts.matrices);
  const std::vector<tclab::EstimatorKind> kinds = parse_kinds(opts.kinds);
  ensure_dir(opts.out_dir);

  tclab::DatasetGenConfig cfg;
  cfg.run.iters = opts.iters;
  cfg.run.estimator.batch = opts.batch;
  cfg.run.estimator.hidden = opts.hidden;
  cfg.run.estimator.lr = opts.lr;
  cfg.path = tclab::path_from_name(opts.path);
  cfg.jobs = opts.jobs;
  if (opts.traces) {
    cfg.trace_dir = opts.out_dir + "/traces";
    ensure_dir(cfg.trace_dir);
  }

  tclab::GenerationResult result = tclab::generate_records(specs, kinds, cfg, opts.seed);
  tclab::save_dataset_csv(opts.out_dir + "/corr_dataset.csv", result.records);
  write_config(opts.out_dir, "gen-dataset", to_json(opts));

  const int total = static_cast<int>(result.summaries.size());
  std::cerr << "runs: " << total << ", records: " << result.records.size()
            << ", dropped (diverged): " << result.dropped << '\n';
  std::cout << "wrote " << result.records.size() << " records to " << opts.out_dir
            << "/corr_dataset.csv\n";
  if (result.dropped * 2 > total) {
    throw DivergenceError("more than half of all runs diverged (" +
                          std::to_string(result.dropped) + "/" + std::to_string(total) + ")");
  }
}

struct TrainCorrectorOpts {
  std::string dataset;
  std::string heads = "mine";
  std::string loss = "mse";
  std::string split = "ratio46";
  int pretrain_epochs = 200;
  int finetune_epochs = 300;
  int batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::string out_dir = default_out_dir();
};

json to_json(const TrainCorrectorOpts& o) {
  return {{"dataset", o.dataset},
          {"heads", o.heads},
          {"loss", o.loss},
          {"split", o.split},
          {"pretrain_epochs", o.pretrain_epochs},
          {"finetune_epochs", o.finetune_epochs},
          {"batch", o.batch},
          {"lr", o.lr},
          {"seed", o.seed},
          {"out_dir", o.out_dir}};
}

TrainCorrectorOpts train_corrector_from_json(const json& j) {
  TrainCorrectorOpts o;
  o.dataset = j.at("dataset").get<std::string>();
  o.heads = j.at("heads").get<std::string>();
  o.loss = j.at("loss").get<std::string>();
  o.split = j.at("split").get<std::string>();
  o.pretrain_epochs = j.at("pretrain_epochs").get<int>();
  o.finetune_epochs = j.at("finetune_epochs").get<int>();
  o.batch = j.at("batch").get<int>();
  o.lr = j.at("lr").get<double>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.out_dir = j.at("out_dir").get<std::string>();
  return o;
}

std::string metrics_csv(const std::vector<tclab::CorrectorHead>& heads,
                        const std::vector<tclab::EpochLoss>& pre,
                        const std::vector<tclab::EpochLoss>& fine) {
  std::ostringstream out;
  out << "stage,epoch";
  for (const auto& h : heads) out << ",loss_pre_" << tclab::kind_name(h.kind);
  out << ",loss_corr,loss_total,test_corr\n";
  auto rows = [&](const char* stage, const std::vector<tclab::EpochLoss>& hist) {
    for (const auto& e : hist) {
      out << stage << ',' << e.epoch;
      for (double v : e.loss_pre) out << ',' << tclab::format_double(v);
      out << ',' << tclab::format_double(e.loss_corr) << ',' << tclab::format_double(e.loss_total)
          << ',' << tclab::format_double(e.test_corr) << '\n';
    }
  };
  rows("pretrain", pre);
  rows("finetune", fine);
  return out.str();
}

std::string eval_csv(const tclab::EvalResult& eval) {
  std::ostringstream out;
  out << "level,count,mae,mse,bias\n";
  auto row = [&](const tclab::LevelMetrics& m) {
    out << m.level << ',' << m.count << ',' << tclab::format_double(m.mae) << ','
        << tclab::format_double(m.mse) << ',' << tclab::format_double(m.bias) << '\n';
  };
  for (const auto& m : eval.per_level) row(m);
  row(eval.aggregate);
  return out.str();
}

void run_train_corrector(const TrainCorrectorOpts& opts) {
  if (!fs::exists(opts.dataset)) throw UsageError("dataset file not found: " + opts.dataset);
  const std::vector<tclab::SequenceRecord> records = tclab::load_dataset_csv(opts.dataset);
  const std::vector<tclab::EstimatorKind> heads = parse_kinds(opts.heads);

  std::set<tclab::EstimatorKind> present;
  for (const auto& r : records) present.insert(r.kind);
  for (tclab::EstimatorKind head : heads) {
    if (!present.count(head)) {
      throw UsageError("head '" + tclab::kind_name(head) + "' has no records in the dataset");
    }
  }
  ensure_dir(opts.out_dir);

  tclab::DatasetSplit split =
      tclab::split_dataset(records, tclab::split_from_name(opts.split), opts.seed);

  tclab::CorrectorConfig cfg;
  cfg.loss = tclab::loss_from_name(opts.loss);
  cfg.pretrain_epochs = opts.pretrain_epochs;
  cfg.finetune_epochs = opts.finetune_epochs;
  cfg.batch = opts.batch;
  cfg.lr = opts.lr;

  tclab::CorrectorModel model =
      tclab::CorrectorModel::init(heads, cfg, tclab::derive_seed(opts.seed, {0x6d6f64u}));
  model.fit_feature_stats(split.train);
  auto pre_hist = model.pretrain(split.train, tclab::derive_seed(opts.seed, {0x707265u}));
  auto fine_hist =
      model.finetune(split.train, tclab::derive_seed(opts.seed, {0x66696eu}), &split.test);

  tclab::write_file(opts.out_dir + "/model.json", model.to_json_string());
  tclab::write_file(opts.out_dir + "/metrics.csv", metrics_csv(model.heads(), pre_hist, fine_hist));
  const tclab::EvalResult eval = model.evaluate(split.test);
  tclab::write_file(opts.out_dir + "/eval.csv", eval_csv(eval));
  write_config(opts.out_dir, "train-corrector", to_json(opts));

  if (model.skipped_in_last_finetune() > 0) {
    std::cerr << "skipped " << model.skipped_in_last_finetune()
              << " matrix ids lacking a sequence for some head\n";
  }
  std::cout << "model written to " << opts.out_dir << "/model.json; test MAE "
            << tclab::format_double(eval.aggregate.mae) << " over " << eval.aggregate.count
            << " examples\n";
}

struct PredictOpts {
  std::string model;
  std::string sequences;
  std::string samples;
  int iters = 3000;
  int batch = 32;
  int hidden = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::string out_dir = default_out_dir();
};

json to_json(const PredictOpts& o) {
  return {{"model", o.model},   {"sequences", o.sequences}, {"samples", o.samples},
          {"iters", o.iters},   {"batch", o.batch},         {"hidden", o.hidden},
          {"lr", o.lr},         {"seed", o.seed},           {"out_dir", o.out_dir}};
}

PredictOpts predict_from_json(const json& j) {
  PredictOpts o;
  o.model = j.at("model").get<std::string>();
  o.sequences = j.at("sequences").get<std::string>();
  o.samples = j.at("samples").get<std::string>();
  o.iters = j.at("iters").get<int>();
  o.batch = j.at("batch").get<int>();
  o.hidden = j.at("hidden").get<int>();
  o.lr = j.at("lr").get<double>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.out_dir = j.at("out_dir").get<std::string>();
  return o;
}

tclab::nn::Matrix load_samples_csv(const std::string& path) {
  const std::string text = tclab::read_file(path);
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    for (const std::string& f : tclab::split(line, ',')) row.push_back(tclab::parse_double(f));
    if (!rows.empty() && rows.back().size() != row.size()) {
      throw UsageError("samples csv: ragged rows");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw UsageError("samples csv: no rows");
  tclab::nn::Matrix m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

void run_predict(const PredictOpts& opts) {
  if (!fs::exists(opts.model)) throw UsageError("model file not found: " + opts.model);
  if (opts.sequences.empty() == opts.samples.empty()) {
    throw UsageError("predict needs exactly one of --sequences or --samples");
  }
  const tclab::CorrectorModel model =
      tclab::CorrectorModel::from_json_string(tclab::read_file(opts.model));
  ensure_dir(opts.out_dir);

  std::map<tclab::EstimatorKind, std::array<double, tclab::kSequencePoints>> sequences;
  json raw_estimates = json::object();

  if (!opts.sequences.empty()) {
    if (!fs::exists(opts.sequences)) throw UsageError("sequences file not found: " + opts.sequences);
    const auto records = tclab::load_dataset_csv(opts.sequences);
    if (records.empty()) throw UsageError("sequences file has no rows");
    const std::string mid = records.front().matrix_id;
    for (const auto& r : records) {
      if (r.matrix_id == mid) sequences[r.kind] = r.sequence;
    }
    for (const auto& head : model.heads()) {
      if (!sequences.count(head.kind)) {
        throw UsageError("sequences file lacks head '" + tclab::kind_name(head.kind) +
                         "' for matrix " + mid);
      }
      tclab::SequenceRecord probe;
      probe.sequence = sequences[head.kind];
      raw_estimates[tclab::kind_name(head.kind)] = tclab::pure_estimate_from_sequence(probe);
    }
  } else {
    if (!fs::exists(opts.samples)) throw UsageError("samples file not found: " + opts.samples);
    const tclab::nn::Matrix pool = load_samples_csv(opts.samples);
    const int dim = static_cast<int>(pool.cols());
    if (opts.iters % tclab::kSequencePoints != 0) {
      throw UsageError("--iters must be a multiple of 30");
    }
    tclab::DecompositionPlan plan = tclab::build_plan(tclab::PathKind::kTree, dim);
    tclab::TcRunConfig run_cfg;
    run_cfg.iters = opts.iters;
    run_cfg.estimator.batch = opts.batch;
    run_cfg.estimator.hidden = opts.hidden;
    run_cfg.estimator.lr = opts.lr;
    for (const auto& head : model.heads()) {
      const std::uint64_t run_seed =
          tclab::derive_seed(opts.seed, {0x70726564u, static_cast<std::uint64_t>(head.kind)});
      tclab::BatchSource source = [&pool, &run_cfg, run_seed](int iter) {
        tclab::Rng rng(tclab::derive_seed(run_seed, {0x706f6f6cu, static_cast<std::uint64_t>(iter)}));
        tclab::nn::Matrix batch(run_cfg.estimator.batch, pool.cols());
        for (int i = 0; i < run_cfg.estimator.batch; ++i) {
          batch.row(i) = pool.row(rng.uniform_int(static_cast<int>(pool.rows())));
        }
        return batch;
      };
      tclab::TcEstimatorRun run = tclab::estimate_tc(source, plan, head.kind, run_cfg, run_seed);
      if (run.failed) {
        throw DivergenceError("estimation diverged for head " + tclab::kind_name(head.kind) +
                              " at iteration " + std::to_string(run.failed_iteration));
      }
      sequences[head.kind] = tclab::downsample_trace(run.total_trace);
      raw_estimates[tclab::kind_name(head.kind)] = run.final_estimate;
    }
  }

  const double corrected = model.predict(sequences);
  json sidecar;
  sidecar["corrected_tc"] = corrected;
  sidecar["raw_final_estimates"] = raw_estimates;
  tclab::write_file(opts.out_dir + "/prediction.json", sidecar.dump(2) + "\n");
  write_config(opts.out_dir, "predict", to_json(opts));
  std::cout << tclab::format_double(corrected) << '\n';
}

struct ExperimentOpts {
  std::string which;
  std::string scale = "desk";
  std::string levels = "1..10";
  int per_level = -1;
  int iters = 3000;
  int repetitions = -1;  // resolved per experiment
  std::string kinds = "mine,nwj,infonce,club";
  std::string dataset;
  bool build_missing = false;
  int batch = 32;
  int hidden = 32;
  double lr = 1e-3;
  int pretrain_epochs = 200;
  int finetune_epochs = 300;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::string out_dir = default_out_dir();
};

json to_json(const ExperimentOpts& o) {
  return {{"which", o.which},
          {"scale", o.scale},
          {"levels", o.levels},
          {"per_level", o.per_level},
          {"iters", o.iters},
          {"repetitions", o.repetitions},
          {"kinds", o.kinds},
          {"dataset", o.dataset},
          {"build_missing", o.build_missing},
          {"batch", o.batch},
          {"hidden", o.hidden},
          {"lr", o.lr},
          {"pretrain_epochs", o.pretrain_epochs},
          {"finetune_epochs", o.finetune_epochs},
          {"seed", o.seed},
          {"jobs", o.jobs},
          {"out_dir", o.out_dir}};
}

ExperimentOpts experiment_from_json(const json& j) {
  ExperimentOpts o;
  o.which = j.at("which").get<std::string>();
  o.scale = j.at("scale").get<std::string>();
  o.levels = j.at("levels").get<std::string>();
  o.per_level = j.at("per_level").get<int>();
  o.iters = j.at("iters").get<int>();
  o.repetitions = j.at("repetitions").get<int>();
  o.kinds = j.at("kinds").get<std::string>();
  o.dataset = j.at("dataset").get<std::string>();
  o.build_missing = j.at("build_missing").get<bool>();
  o.batch = j.at("batch").get<int>();
  o.hidden = j.at("hidden").get<int>();
  o.lr = j.at("lr").get<double>();
  o.pretrain_epochs = j.at("pretrain_epochs").get<int>();
  o.finetune_epochs = j.at("finetune_epochs").get<int>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.jobs = j.at("jobs").get<int>();
  o.out_dir = j.at("out_dir").get<std::string>();
  return o;
}

std::vector<tclab::SequenceRecord> experiment_dataset(const ExperimentOpts& opts) {
  if (!opts.dataset.empty()) {
    if (!fs::exists(opts.dataset)) throw UsageError("dataset file not found: " + opts.dataset);
    return tclab::load_dataset_csv(opts.dataset);
  }
  if (!opts.build_missing) {
    throw UsageError("experiment '" + opts.which +
                     "' needs --dataset <corr_dataset.csv> or --build-missing");
  }
  const std::vector<double> levels = parse_levels(opts.levels);
  const int per_level = resolve_per_level(opts.per_level, opts.scale);
  tclab::GenerationResult gen = tclab::generate_dataset(
      levels, per_level, parse_kinds(opts.kinds), opts.iters,
      tclab::derive_seed(opts.seed, {0x64736574u}), opts.jobs);
  tclab::save_dataset_csv(opts.out_dir + "/corr_dataset.csv", gen.records);
  std::cerr << "built dataset: " << gen.records.size() << " records, dropped " << gen.dropped
            << '\n';
  return gen.records;
}

void run_experiment(const ExperimentOpts& opts) {
  ensure_dir(opts.out_dir);
  const std::vector<tclab::EstimatorKind> kinds = parse_kinds(opts.kinds);
  std::ostringstream summary;

  if (opts.which == "bias-correlation") {
    tclab::ExperimentConfig cfg;
    cfg.run.iters = opts.iters;
    cfg.run.estimator.batch = opts.batch;
    cfg.run.estimator.hidden = opts.hidden;
    cfg.run.estimator.lr = opts.lr;
    cfg.jobs = opts.jobs;
    cfg.scale = opts.scale;
    const std::vector<double> levels = parse_levels(opts.levels);
    const int per_level = resolve_per_level(opts.per_level, opts.scale);
    tclab::BiasCorrelationReport report =
        tclab::bias_correlation_experiment(kinds, levels, per_level, opts.seed, cfg);
    tclab::write_file(opts.out_dir + "/bias_correlation.csv", tclab::bias_correlation_to_csv(report));
    tclab::write_file(opts.out_dir + "/bias_correlation_spearman.csv",
                      tclab::correlation_pivot_csv(report, "spearman"));
    tclab::write_file(opts.out_dir + "/bias_correlation_pearson.csv",
                      tclab::correlation_pivot_csv(report, "pearson"));
    summary << "bias-correlation over levels " << opts.levels << ", " << per_level
            << " specs/level\n";
    for (const auto& c : report.cells) {
      summary << "  level " << c.level << ' ' << tclab::kind_name(c.kind) << ": spearman "
              << tclab::format_double(c.spearman_rho) << ", pearson "
              << tclab::format_double(c.pearson_r) << ", n " << c.n_specs
              << (c.flagged ? " [flagged]" : "") << '\n';
    }
  } else if (opts.which == "bias-variance") {
    const int reps = opts.repetitions > 0 ? opts.repetitions : 5;
    const std::vector<tclab::SequenceRecord> records = experiment_dataset(opts);
    tclab::DatasetSplit split =
        tclab::split_dataset(records, tclab::SplitKind::kRatio46,
                             tclab::derive_seed(opts.seed, {0x73706cu}));
    // one single-head corrector per kind supplies the corrector column
    tclab::CorrectorConfig ccfg;
    ccfg.pretrain_epochs = opts.pretrain_epochs;
    ccfg.finetune_epochs = opts.finetune_epochs;
    std::vector<tclab::CorrectorModel> models;
    std::map<tclab::EstimatorKind, const tclab::CorrectorModel*> model_ptrs;
    for (tclab::EstimatorKind kind : kinds) {
      tclab::CorrectorModel model = tclab::CorrectorModel::init(
          {kind}, ccfg, tclab::derive_seed(opts.seed, {0x6d646cu, static_cast<std::uint64_t>(kind)}));
      model.fit_feature_stats(split.train);
      model.pretrain(split.train, tclab::derive_seed(opts.seed, {0x70u, static_cast<std::uint64_t>(kind)}));
      model.finetune(split.train, tclab::derive_seed(opts.seed, {0x66u, static_cast<std::uint64_t>(kind)}));
      models.push_back(std::move(model));
    }
    for (std::size_t i = 0; i < kinds.size(); ++i) model_ptrs[kinds[i]] = &models[i];

    tclab::ExperimentConfig cfg;
    cfg.run.iters = opts.iters;
    cfg.run.estimator.batch = opts.batch;
    cfg.run.estimator.hidden = opts.hidden;
    cfg.run.estimator.lr = opts.lr;
    cfg.jobs = opts.jobs;
    cfg.scale = opts.scale;
    tclab::BiasVarianceReport report = tclab::bias_variance_experiment(
        kinds, model_ptrs, split.test, parse_levels(opts.levels), reps, opts.seed, cfg);
    tclab::write_file(opts.out_dir + "/bias_variance.csv", tclab::bias_variance_to_csv(report));
    summary << "bias-variance with " << reps << " repetitions per level\n";
    for (const auto& r : report.rows) {
      summary << "  level " << r.level << ' ' << tclab::kind_name(r.kind) << ": est bias "
              << tclab::format_double(r.estimator_bias) << ", est var "
              << tclab::format_double(r.estimator_variance) << ", corr bias "
              << tclab::format_double(r.corrector_bias) << '\n';
    }
  } else if (opts.which == "robustness") {
    const int reps = opts.repetitions > 0 ? opts.repetitions : 3;
    const std::vector<tclab::SequenceRecord> records = experiment_dataset(opts);
    tclab::CorrectorConfig ccfg;
    ccfg.pretrain_epochs = opts.pretrain_epochs;
    ccfg.finetune_epochs = opts.finetune_epochs;
    tclab::RobustnessReport report =
        tclab::robustness_experiment(records, kinds, ccfg, opts.seed, reps);
    report.scale = opts.scale;
    tclab::write_file(opts.out_dir + "/robustness.csv", tclab::robustness_to_csv(report));
    summary << "robustness (training masked to tc < 5.5), " << reps << " repetitions\n";
    for (const auto& r : report.rows) {
      if (r.level != -1) continue;
      summary << "  " << tclab::loss_name(r.loss) << ' ' << tclab::kind_name(r.kind)
              << ": corrector mae " << tclab::format_double(r.corrector_mae) << ", pure mae "
              << tclab::format_double(r.pure_mae) << '\n';
    }
  } else {
    throw UsageError("unknown experiment: " + opts.which +
                     " (expected bias-correlation, bias-variance or robustness)");
  }

  tclab::write_file(opts.out_dir + "/summary.txt", summary.str());
  write_config(opts.out_dir, "experiment", to_json(opts));
  std::cout << summary.str();
}

int run_rerun(const std::string& config_path, const std::string& out_override) {
  if (!fs::exists(config_path)) throw UsageError("config file not found: " + config_path);
  json j = json::parse(tclab::read_file(config_path));
  const std::string sub = j.at("subcommand").get<std::string>();
  json options = j.at("options");
  if (!out_override.empty()) options["out_dir"] = out_override;
  if (sub == "gen-matrices") {
    run_gen_matrices(gen_matrices_from_json(options));
  } else if (sub == "gen-dataset") {
    run_gen_dataset(gen_dataset_from_json(options));
  } else if (sub == "train-corrector") {
    run_train_corrector(train_corrector_from_json(options));
  } else if (sub == "predict") {
    run_predict(predict_from_json(options));
  } else if (sub == "experiment") {
    run_experiment(experiment_from_json(options));
  } else {
    throw UsageError("config names unknown subcommand: " + sub);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"total-correlation estimation lab"};
  app.require_subcommand(1);

  GenMatricesOpts gm;
  CLI::App* c_gm = app.add_subcommand("gen-matrices", "generate covariance matrices with exact TC labels");
  c_gm->add_option("--dim", gm.dim, "variable dimension");
  c_gm->add_option("--levels", gm.levels, "tc levels, e.g. 1..10 or 1,2.5,7");
  c_gm->add_option("--per-level", gm.per_level, "matrices per level (default from --scale)");
  c_gm->add_option("--scale", gm.scale, "preset: desk (20/level) or full (200/level)");
  c_gm->add_option("--seed", gm.seed, "root seed");
  c_gm->add_option("--out-dir", gm.out_dir, "output directory");

  GenDatasetOpts gd;
  CLI::App* c_gd = app.add_subcommand("gen-dataset", "run estimators over matrices and record loss sequences");
  c_gd->add_option("--matrices", gd.matrices, "matrices json from gen-matrices")->required();
  c_gd->add_option("--kinds", gd.kinds, "comma list of mine,nwj,infonce,club");
  c_gd->add_option("--path", gd.path, "decomposition path: tree or line");
  c_gd->add_option("--iters", gd.iters, "training iterations per run (multiple of 30)");
  c_gd->add_option("--batch", gd.batch, "estimator batch size");
  c_gd->add_option("--hidden", gd.hidden, "critic hidden width");
  c_gd->add_option("--lr", gd.lr, "estimator learning rate");
  c_gd->add_option("--seed", gd.seed, "root seed");
  c_gd->add_option("--jobs", gd.jobs, "worker threads");
  c_gd->add_flag("--traces", gd.traces, "also write per-run trace csvs");
  c_gd->add_option("--out-dir", gd.out_dir, "output directory");

  TrainCorrectorOpts tc;
  CLI::App* c_tc = app.add_subcommand("train-corrector", "train a loss-sequence corrector");
  c_tc->add_option("--dataset", tc.dataset, "corr_dataset.csv")->required();
  c_tc->add_option("--heads", tc.heads, "comma list of estimator heads");
  c_tc->add_option("--loss", tc.loss, "fine-tune loss: mse or l1");
  c_tc->add_option("--split", tc.split, "ratio37, ratio46 or tc_mask_6_10");
  c_tc->add_option("--pretrain-epochs", tc.pretrain_epochs, "autoencoder epochs");
  c_tc->add_option("--finetune-epochs", tc.finetune_epochs, "joint epochs");
  c_tc->add_option("--batch", tc.batch, "minibatch size");
  c_tc->add_option("--lr", tc.lr, "learning rate");
  c_tc->add_option("--seed", tc.seed, "root seed");
  c_tc->add_option("--out-dir", tc.out_dir, "output directory");

  PredictOpts pr;
  CLI::App* c_pr = app.add_subcommand("predict", "corrected TC for new sequences or raw samples");
  c_pr->add_option("--model", pr.model, "model.json")->required();
  c_pr->add_option("--sequences", pr.sequences, "dataset-format csv with one sequence per head");
  c_pr->add_option("--samples", pr.samples, "raw sample csv (rows of dim floats); estimation runs first");
  c_pr->add_option("--iters", pr.iters, "estimation iterations for --samples");
  c_pr->add_option("--batch", pr.batch, "estimator batch size");
  c_pr->add_option("--hidden", pr.hidden, "critic hidden width");
  c_pr->add_option("--lr", pr.lr, "estimator learning rate");
  c_pr->add_option("--seed", pr.seed, "root seed");
  c_pr->add_option("--out-dir", pr.out_dir, "output directory");

  ExperimentOpts ex;
  CLI::App* c_ex = app.add_subcommand("experiment", "bias-correlation, bias-variance or robustness study");
  c_ex->add_option("which", ex.which, "experiment name")->required();
  c_ex->add_option("--scale", ex.scale, "desk or full");
  c_ex->add_option("--levels", ex.levels, "tc levels");
  c_ex->add_option("--per-level", ex.per_level, "specs per level (default from --scale)");
  c_ex->add_option("--iters", ex.iters, "estimator iterations");
  c_ex->add_option("--repetitions", ex.repetitions, "repetitions where applicable");
  c_ex->add_option("--kinds", ex.kinds, "estimator kinds");
  c_ex->add_option("--dataset", ex.dataset, "existing corr_dataset.csv");
  c_ex->add_flag("--build-missing", ex.build_missing, "generate missing prerequisites");
  c_ex->add_option("--batch", ex.batch, "estimator batch size");
  c_ex->add_option("--hidden", ex.hidden, "critic hidden width");
  c_ex->add_option("--lr", ex.lr, "estimator learning rate");
  c_ex->add_option("--pretrain-epochs", ex.pretrain_epochs, "corrector pretrain epochs");
  c_ex->add_option("--finetune-epochs", ex.finetune_epochs, "corrector finetune epochs");
  c_ex->add_option("--seed", ex.seed, "root seed");
  c_ex->add_option("--jobs", ex.jobs, "worker threads");
  c_ex->add_option("--out-dir", ex.out_dir, "output directory");

  std::string rerun_config;
  std::string rerun_out;
  CLI::App* c_rr = app.add_subcommand("rerun", "re-execute a run from its emitted config.json");
  c_rr->add_option("config", rerun_config, "path to config.json")->required();
  c_rr->add_option("--out-dir", rerun_out, "override the output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (c_gm->parsed()) run_gen_matrices(gm);
    if (c_gd->parsed()) run_gen_dataset(gd);
    if (c_tc->parsed()) run_train_corrector(tc);
    if (c_pr->parsed()) run_predict(pr);
    if (c_ex->parsed()) run_experiment(ex);
    if (c_rr->parsed()) return run_rerun(rerun_config, rerun_out);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return 0;
}
