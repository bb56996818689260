#include <benchmark/benchmark.h>

#include "iso/harness.hpp"
#include "iso/irl.hpp"
#include "iso/optimizer.hpp"
#include "iso/user_sim.hpp"

namespace {

iso::SampledSystem system_for(int n, int cf) {
  iso::Rng rng(42);
  return iso::sample_system(n, 4, cf, 0.25, 0.9, rng);
}

void BM_SoftValueIteration(benchmark::State& state) {
  const auto sys = system_for(static_cast<int>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(iso::soft_value_iteration(sys.mdp, sys.reward));
}
BENCHMARK(BM_SoftValueIteration)->Arg(16)->Arg(64)->Arg(256);

void BM_PolicyEvaluation(benchmark::State& state) {
  const auto sys = system_for(static_cast<int>(state.range(0)), 8);
  const auto pi = iso::PolicyTable::uniform(sys.mdp.n_states(), 4);
  for (auto _ : state) benchmark::DoNotOptimize(iso::policy_evaluation(sys.mdp, pi, sys.reward));
}
BENCHMARK(BM_PolicyEvaluation)->Arg(16)->Arg(64)->Arg(256);

void BM_SolveMdpPlus(benchmark::State& state) {
  const auto sys = system_for(64, static_cast<int>(state.range(0)));
  const auto pi = iso::soft_value_iteration(sys.mdp, sys.reward).policy;
  const auto mp = iso::build_mdp_plus(sys.mdp, pi, sys.reward);
  for (auto _ : state) benchmark::DoNotOptimize(iso::solve_mdp_plus(mp));
}
BENCHMARK(BM_SolveMdpPlus)->Arg(2)->Arg(8)->Arg(32);

void BM_MaxEntRecovery(benchmark::State& state) {
  const auto sys = system_for(64, 2);
  const auto pi = iso::soft_value_iteration(sys.mdp, sys.reward).policy;
  iso::DatasetSpec spec;
  spec.n_trajectories = 2000;
  const auto ds = iso::sample_dataset(sys.mdp, pi, spec);
  iso::MaxEntConfig cfg;
  cfg.n_gradient_steps = static_cast<int>(state.range(0));
  const auto features = sys.reward.with_theta(std::vector<double>(64, 0.0));
  for (auto _ : state) benchmark::DoNotOptimize(iso::maxent_irl(sys.mdp, ds, features, cfg));
}
BENCHMARK(BM_MaxEntRecovery)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_IsoIterationOracle(benchmark::State& state) {
  const auto sys = system_for(64, 2);
  iso::IsoConfig cfg;
  cfg.recoverer = iso::Recoverer::DmOracle;
  cfg.dataset.n_trajectories = 2000;
  for (auto _ : state) benchmark::DoNotOptimize(iso::iso_iteration(sys.mdp, sys.reward, cfg, 1));
}
BENCHMARK(BM_IsoIterationOracle)->Unit(benchmark::kMillisecond);

}  // namespace

// The packaged benchmark_main archive is LTO bytecode from another compiler release.
BENCHMARK_MAIN();
