// Serial reference against the OpenMP and vectorized paths.

#include <benchmark/benchmark.h>

#include "tve/eif.hpp"
#include "tve/montecarlo.hpp"
#include "tve/reference.hpp"

using namespace tve;

namespace {

ScenarioConfig bench_scenario(std::size_t reps) {
  ScenarioConfig cfg;
  cfg.dgd = DgdSpec{DgdKind::Simple, 0.0, 0.0};
  cfg.n = 500;
  cfg.reps = reps;
  return cfg;
}

void BM_ScenarioSerial(benchmark::State& state) {
  const ScenarioConfig cfg = bench_scenario(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(run_scenario_serial(cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ScenarioOpenMP(benchmark::State& state) {
  const ScenarioConfig cfg = bench_scenario(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(run_scenario(cfg, 0));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

struct EifInput {
  Dataset d;
  NuisanceFit fit;
};

EifInput eif_input(std::size_t n) {
  const SimulatedData s = simulate(DgdSpec{DgdKind::Simple, 0.0, 0.0}, n, 3);
  return {s.data, make_fit(s.truth.qbar1_true, s.truth.qbar0_true, s.truth.g1_true)};
}

void BM_EifReference(benchmark::State& state) {
  const EifInput in = eif_input(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(reference::eif_sigma2_full(in.fit, in.d));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_EifVectorized(benchmark::State& state) {
  const EifInput in = eif_input(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(eif_sigma2(in.fit, moments(in.fit), in.d).full());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_ScenarioSerial)->Arg(16)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ScenarioOpenMP)->Arg(16)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_EifReference)->Arg(1000)->Arg(100000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_EifVectorized)->Arg(1000)->Arg(100000)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
