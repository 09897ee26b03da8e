#include <benchmark/benchmark.h>

#include "tclab/decomp.hpp"
#include "tclab/gaussian.hpp"
#include "tclab/mi_bounds.hpp"
#include "tclab/rng.hpp"

using namespace tclab;

namespace {

GaussianSpec spec4() {
  static GaussianSpec spec = gen_spec_with_target_tc(4, 5.0, 1);
  return spec;
}

void BM_AnalyticTc(benchmark::State& state) {
  const GaussianSpec spec = spec4();
  for (auto _ : state) {
    benchmark::DoNotOptimize(analytic_tc(spec.sigma));
  }
}
BENCHMARK(BM_AnalyticTc);

void BM_GenSpecWithTargetTc(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(gen_spec_with_target_tc(4, 5.0, seed++));
  }
}
BENCHMARK(BM_GenSpecWithTargetTc);

void BM_SampleBatch(benchmark::State& state) {
  const GaussianSpec spec = spec4();
  const int batch = static_cast<int>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample(spec, batch, seed++));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_SampleBatch)->Arg(32)->Arg(128)->Arg(1024);

void BM_TrainStep(benchmark::State& state) {
  const EstimatorKind kind = static_cast<EstimatorKind>(state.range(0));
  const GaussianSpec spec = spec4();
  EstimatorConfig cfg;
  MiEstimator est(kind, 2, 2, cfg, 7);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const auto data = sample(spec, cfg.batch, seed).data;
    PairedBatch batch = make_paired_batch(data, {0, 1}, {2, 3}, seed++);
    benchmark::DoNotOptimize(est.train_step(batch));
  }
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(EstimatorKind::kMine))
    ->Arg(static_cast<int>(EstimatorKind::kNwj))
    ->Arg(static_cast<int>(EstimatorKind::kInfoNce))
    ->Arg(static_cast<int>(EstimatorKind::kClub));

void BM_TreeRunIteration(benchmark::State& state) {
  // one full tree-path iteration: three paired batches and three steps
  const GaussianSpec spec = spec4();
  const DecompositionPlan plan = build_plan(PathKind::kTree, 4);
  EstimatorConfig cfg;
  std::vector<MiEstimator> ests;
  for (const auto& term : plan.terms) {
    ests.emplace_back(EstimatorKind::kMine, static_cast<int>(term.x_indices.size()),
                      static_cast<int>(term.y_indices.size()), cfg, 11);
  }
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const auto data = sample(spec, cfg.batch, seed).data;
    double total = 0.0;
    for (std::size_t t = 0; t < plan.terms.size(); ++t) {
      PairedBatch batch =
          make_paired_batch(data, plan.terms[t].x_indices, plan.terms[t].y_indices, seed + t);
      total += ests[t].train_step(batch).bound;
    }
    benchmark::DoNotOptimize(total);
    ++seed;
  }
}
BENCHMARK(BM_TreeRunIteration);

}  // namespace

BENCHMARK_MAIN();
