// Serial reference against the OpenMP path for the parallel kernels.
#include <benchmark/benchmark.h>

#include <random>

#include "p2pgrid/dispatch.hpp"
#include "p2pgrid/harness.hpp"
#include "p2pgrid/kernels.hpp"
#include "p2pgrid/negotiation.hpp"

using namespace p2pgrid;

namespace {

ExecutionPolicy policy_of(const benchmark::State& state) {
  return state.range(1) ? ExecutionPolicy::kParallel : ExecutionPolicy::kSerial;
}

void BM_NormalMatrix(benchmark::State& state) {
  const Eigen::Index m = state.range(0);
  const Eigen::Index n = 2 * m;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Eigen::MatrixXd g(n, m);
  Eigen::VectorXd w(n), diag(m);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < n; ++i) g(i, j) = unif(rng);
  for (Eigen::Index i = 0; i < n; ++i) w(i) = 1.0 + unif(rng);
  diag.setConstant(1e-8);
  Eigen::MatrixXd out;
  for (auto _ : state) {
    assemble_normal_matrix(g, w, diag, out, policy_of(state));
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_CentralizedDispatch(benchmark::State& state) {
  ProfileSet profiles = generate_profiles({6, 24 * 7, 0, 2});
  ScenarioRecipe r;
  r.agents = 6;
  r.horizon = static_cast<std::size_t>(state.range(0));
  r.total_battery = 30;
  r.battery_power = 5;
  const auto sc = generate_scenario(profiles, r);
  SolverOptions opt;
  opt.policy = policy_of(state);
  for (auto _ : state) benchmark::DoNotOptimize(solve_centralized(sc, opt).welfare);
}

void BM_Negotiation(benchmark::State& state) {
  ProfileSet profiles = generate_profiles({6, 24 * 7, 0, 3});
  ScenarioRecipe r;
  r.agents = 6;
  r.horizon = static_cast<std::size_t>(state.range(0));
  r.total_battery = 40;
  r.battery_power = 5;
  const auto sc = generate_scenario(profiles, r);
  NegotiationConfig cfg;
  cfg.policy = policy_of(state);
  for (auto _ : state) benchmark::DoNotOptimize(run_negotiation(sc, cfg).iterations);
}

void BM_GammaSweep(benchmark::State& state) {
  GammaSweepConfig cfg;
  cfg.trials = static_cast<int>(state.range(0));
  cfg.parallel = state.range(1) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(run_gamma_sweep(cfg).size());
}

}  // namespace

BENCHMARK(BM_NormalMatrix)->ArgsProduct({{64, 256, 512}, {0, 1}})->Unit(benchmark::kMicrosecond)->UseRealTime();
BENCHMARK(BM_CentralizedDispatch)->ArgsProduct({{12, 24}, {0, 1}})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Negotiation)->ArgsProduct({{12}, {0, 1}})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_GammaSweep)->ArgsProduct({{20}, {0, 1}})->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
