// Lasso kernels against each other, parallel Monte Carlo runner against the serial one.
#include <benchmark/benchmark.h>

#include "orthoml/dgp.hpp"
#include "orthoml/harness.hpp"
#include "orthoml/lasso.hpp"

using namespace orthoml;

namespace {

struct LassoProblem {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  double lambda;
};

LassoProblem make_problem(int n, int p, int s) {
  Rng rng(42);
  const auto inst = generate_instance(p, s, 3.0, {}, default_discrete_eta(), NoiseDistribution::uniform(1.0), rng);
  const auto data = generate_dataset(inst, n, rng);
  return {data.X, data.T, lambda_experiment(p, 2 * n)};
}

void BM_Lasso(benchmark::State& state) {
  const auto prob = make_problem(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)), 20);
  LassoConfig cfg;
  cfg.lambda = prob.lambda;
  for (auto _ : state) benchmark::DoNotOptimize(lasso_fit(prob.X, prob.y, cfg).beta_hat.data());
}

void BM_LassoGram(benchmark::State& state) {
  const auto prob = make_problem(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)), 20);
  LassoConfig cfg;
  cfg.lambda = prob.lambda;
  for (auto _ : state) {
    const GramSystem sys = GramSystem::from_design(prob.X);
    benchmark::DoNotOptimize(lasso_fit_gram(sys, prob.X.transpose() * prob.y, prob.y.squaredNorm(), cfg).beta_hat.data());
  }
}

ExperimentConfig small_experiment() {
  ExperimentConfig cfg = desk_preset();
  cfg.n = 1000;
  cfg.p = 100;
  cfg.sparsity_grid = {20};
  cfg.n_instances = 2;
  cfg.n_reps = 8;
  return cfg;
}

void BM_MonteCarloParallel(benchmark::State& state) {
  const auto cfg = small_experiment();
  for (auto _ : state) benchmark::DoNotOptimize(run_monte_carlo(cfg).cells.size());
}

void BM_MonteCarloSerial(benchmark::State& state) {
  const auto cfg = small_experiment();
  for (auto _ : state) benchmark::DoNotOptimize(run_monte_carlo_serial(cfg).cells.size());
}

}  // namespace

BENCHMARK(BM_Lasso)->Args({1000, 200})->Args({2500, 1000})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LassoGram)->Args({1000, 200})->Args({2500, 1000})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MonteCarloParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MonteCarloSerial)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
