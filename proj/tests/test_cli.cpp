#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "tclab/dataset.hpp"
#include "tclab/gaussian.hpp"
#include "tclab/text.hpp"

namespace fs = std::filesystem;
using namespace tclab;

namespace {

std::string bin() {
  const char* b = std::getenv("TCLAB_BIN");
  REQUIRE_MESSAGE(b != nullptr, "TCLAB_BIN must point at the tclab binary");
  return b;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("tclab_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args, const std::string& stdout_file = "/dev/null") {
  const std::string cmd = bin() + " " + args + " > " + stdout_file + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("gen-matrices writes the requested spec count and a config echo") {
  TempDir dir;
  const int code =
      run("gen-matrices --dim 4 --levels 1..2 --per-level 3 --seed 5 --out-dir " + (dir / ""));
  CHECK(code == 0);
  const auto specs = load_matrices(dir / "matrices.json");
  CHECK(specs.size() == 6);
  CHECK(specs[0].id == "m0");
  CHECK(fs::exists(dir / "config.json"));
}

TEST_CASE("gen-matrices reruns are byte-identical, including via rerun") {
  TempDir a, b, c;
  run("gen-matrices --levels 1..2 --per-level 2 --seed 9 --out-dir " + (a / ""));
  run("gen-matrices --levels 1..2 --per-level 2 --seed 9 --out-dir " + (b / ""));
  CHECK(read_file(a / "matrices.json") == read_file(b / "matrices.json"));
  const int code = run("rerun " + (a / "config.json") + " --out-dir " + (c / ""));
  CHECK(code == 0);
  CHECK(read_file(a / "matrices.json") == read_file(c / "matrices.json"));
}

TEST_CASE("gen-dataset produces filtered rows and honors --kinds") {
  TempDir dir;
  run("gen-matrices --levels 1..1 --per-level 2 --seed 3 --out-dir " + (dir / ""));
  const int code = run("gen-dataset --matrices " + (dir / "matrices.json") +
                       " --kinds mine --iters 300 --seed 4 --out-dir " + (dir / ""));
  CHECK(code == 0);
  const auto records = load_dataset_csv(dir / "corr_dataset.csv");
  CHECK(records.size() == 2);
  for (const auto& r : records) CHECK(r.kind == EstimatorKind::kMine);
}

TEST_CASE("gen-dataset without a matrices file exits 2") {
  TempDir dir;
  CHECK(run("gen-dataset --matrices " + (dir / "absent.json") + " --out-dir " + (dir / "")) == 2);
}

TEST_CASE("unknown flags and missing subcommands exit 2") {
  TempDir dir;
  CHECK(run("gen-matrices --no-such-flag 1 --out-dir " + (dir / "")) == 2);
  CHECK(run("") == 2);
  CHECK(run("experiment nonsense --out-dir " + (dir / "")) == 2);
}

TEST_CASE("train-corrector trains, evaluates and validates heads") {
  TempDir dir;
  run("gen-matrices --levels 1..3 --per-level 4 --seed 6 --out-dir " + (dir / ""));
  run("gen-dataset --matrices " + (dir / "matrices.json") +
      " --kinds mine,nwj --iters 300 --seed 7 --out-dir " + (dir / ""));
  const int code = run("train-corrector --dataset " + (dir / "corr_dataset.csv") +
                       " --heads mine --loss mse --split ratio37 --pretrain-epochs 10 "
                       "--finetune-epochs 10 --seed 8 --out-dir " +
                       (dir / ""));
  CHECK(code == 0);
  CHECK(fs::exists(dir / "model.json"));
  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "eval.csv"));
  // absent head is a config error naming the head: exit 2
  CHECK(run("train-corrector --dataset " + (dir / "corr_dataset.csv") +
            " --heads club --out-dir " + (dir / "")) == 2);
}

TEST_CASE("train-corrector accepts all six two-head combinations") {
  TempDir dir;
  run("gen-matrices --levels 1..1 --per-level 3 --seed 16 --out-dir " + (dir / ""));
  run("gen-dataset --matrices " + (dir / "matrices.json") +
      " --kinds mine,nwj,infonce,club --iters 300 --seed 17 --out-dir " + (dir / ""));
  const char* pairs[] = {"mine,nwj",    "mine,infonce", "mine,club",
                         "nwj,infonce", "nwj,club",     "infonce,club"};
  for (const char* heads : pairs) {
    TempDir out;
    const int code = run("train-corrector --dataset " + (dir / "corr_dataset.csv") +
                         " --heads " + heads +
                         " --pretrain-epochs 2 --finetune-epochs 2 --seed 1 --out-dir " +
                         (out / ""));
    CAPTURE(heads);
    CHECK(code == 0);
  }
}

TEST_CASE("predict on sequences prints a float and reruns identically") {
  TempDir dir;
  run("gen-matrices --levels 1..3 --per-level 4 --seed 10 --out-dir " + (dir / ""));
  run("gen-dataset --matrices " + (dir / "matrices.json") +
      " --kinds mine --iters 300 --seed 11 --out-dir " + (dir / ""));
  run("train-corrector --dataset " + (dir / "corr_dataset.csv") +
      " --heads mine --pretrain-epochs 10 --finetune-epochs 10 --seed 12 --out-dir " + (dir / ""));
  const int code = run("predict --model " + (dir / "model.json") + " --sequences " +
                           (dir / "corr_dataset.csv") + " --seed 13 --out-dir " + (dir / ""),
                       dir / "stdout_a.txt");
  CHECK(code == 0);
  CHECK(fs::exists(dir / "prediction.json"));
  const std::string first = read_file(dir / "stdout_a.txt");
  CHECK(!first.empty());
  CHECK_NOTHROW(parse_double(split(first, '\n')[0]));
  run("predict --model " + (dir / "model.json") + " --sequences " + (dir / "corr_dataset.csv") +
          " --seed 13 --out-dir " + (dir / ""),
      dir / "stdout_b.txt");
  CHECK(read_file(dir / "stdout_b.txt") == first);
}

TEST_CASE("predict on raw samples runs the estimators first") {
  TempDir dir;
  run("gen-matrices --levels 1..2 --per-level 3 --seed 20 --out-dir " + (dir / ""));
  run("gen-dataset --matrices " + (dir / "matrices.json") +
      " --kinds mine --iters 300 --seed 21 --out-dir " + (dir / ""));
  run("train-corrector --dataset " + (dir / "corr_dataset.csv") +
      " --heads mine --pretrain-epochs 5 --finetune-epochs 5 --seed 22 --out-dir " + (dir / ""));
  // identity-covariance samples, written as a plain csv
  GaussianSpec spec;
  spec.dim = 4;
  spec.sigma = Eigen::MatrixXd::Identity(4, 4);
  spec.true_tc = 0.0;
  const auto pool = sample(spec, 512, 23).data;
  std::ostringstream csv;
  for (Eigen::Index i = 0; i < pool.rows(); ++i) {
    for (Eigen::Index j = 0; j < pool.cols(); ++j) {
      if (j) csv << ',';
      csv << format_double(pool(i, j));
    }
    csv << '\n';
  }
  write_file(dir / "samples.csv", csv.str());
  const int code = run("predict --model " + (dir / "model.json") + " --samples " +
                           (dir / "samples.csv") + " --iters 300 --seed 24 --out-dir " + (dir / ""),
                       dir / "stdout.txt");
  CHECK(code == 0);
  const std::string sidecar = read_file(dir / "prediction.json");
  CHECK(sidecar.find("raw_final_estimates") != std::string::npos);
  CHECK(sidecar.find("mine") != std::string::npos);
}

TEST_CASE("predict divergence exits 3") {
  TempDir dir;
  run("gen-matrices --levels 1..2 --per-level 3 --seed 30 --out-dir " + (dir / ""));
  run("gen-dataset --matrices " + (dir / "matrices.json") +
      " --kinds mine --iters 300 --seed 31 --out-dir " + (dir / ""));
  run("train-corrector --dataset " + (dir / "corr_dataset.csv") +
      " --heads mine --pretrain-epochs 2 --finetune-epochs 2 --seed 32 --out-dir " + (dir / ""));
  // absurdly scaled samples overflow the critic forward pass immediately
  std::ostringstream csv;
  for (int i = 0; i < 64; ++i) csv << "1e200,-1e200,1e200,-1e200\n";
  write_file(dir / "huge.csv", csv.str());
  CHECK(run("predict --model " + (dir / "model.json") + " --samples " + (dir / "huge.csv") +
            " --iters 30 --seed 33 --out-dir " + (dir / "")) == 3);
}

TEST_CASE("experiment bias-correlation writes reports and reruns byte-identically") {
  TempDir dir, twin;
  const int code = run("experiment bias-correlation --levels 1..2 --per-level 5 --kinds mine "
                       "--iters 300 --seed 40 --out-dir " +
                       (dir / ""));
  CHECK(code == 0);
  for (const char* f : {"bias_correlation.csv", "bias_correlation_spearman.csv",
                        "bias_correlation_pearson.csv", "summary.txt", "config.json"}) {
    CAPTURE(f);
    CHECK(fs::exists(dir / f));
  }
  const std::string csv = read_file(dir / "bias_correlation.csv");
  CHECK(csv.rfind("# seed=40 scale=desk", 0) == 0);
  CHECK(run("rerun " + (dir / "config.json") + " --out-dir " + (twin / "")) == 0);
  CHECK(read_file(twin / "bias_correlation.csv") == csv);
  CHECK(read_file(twin / "bias_correlation_spearman.csv") ==
        read_file(dir / "bias_correlation_spearman.csv"));
}

TEST_CASE("experiment robustness needs a dataset unless --build-missing") {
  TempDir dir;
  CHECK(run("experiment robustness --kinds mine --out-dir " + (dir / "")) == 2);
  // micro end-to-end with --build-missing
  const int code = run("experiment robustness --kinds mine --levels 1..10 --per-level 1 "
                       "--iters 300 --repetitions 1 --pretrain-epochs 5 --finetune-epochs 5 "
                       "--build-missing --seed 41 --out-dir " +
                       (dir / ""));
  CHECK(code == 0);
  CHECK(fs::exists(dir / "robustness.csv"));
  CHECK(fs::exists(dir / "corr_dataset.csv"));
}

TEST_CASE("experiment bias-variance runs at micro scale") {
  TempDir dir;
  run("gen-matrices --levels 1..2 --per-level 3 --seed 50 --out-dir " + (dir / ""));
  run("gen-dataset --matrices " + (dir / "matrices.json") +
      " --kinds mine --iters 300 --seed 51 --out-dir " + (dir / ""));
  const int code = run("experiment bias-variance --kinds mine --levels 1..2 --repetitions 5 "
                       "--iters 300 --pretrain-epochs 5 --finetune-epochs 5 --dataset " +
                       (dir / "corr_dataset.csv") + " --seed 52 --out-dir " + (dir / ""));
  CHECK(code == 0);
  CHECK(fs::exists(dir / "bias_variance.csv"));
}

TEST_CASE("TC_LAB_OUT provides the default output directory") {
  TempDir dir;
  const std::string cmd = "TC_LAB_OUT=" + (dir / "env_out") + " " + bin() +
                          " gen-matrices --levels 1..1 --per-level 1 --seed 60 >/dev/null 2>&1";
  CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  CHECK(fs::exists(dir / "env_out/matrices.json"));
}
