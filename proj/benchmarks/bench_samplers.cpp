#include "bamifun/harness.hpp"
#include "bamifun/multiway_gibbs.hpp"
#include "bamifun/single_gibbs.hpp"

#include <benchmark/benchmark.h>

using namespace bamifun;

namespace {

// Coefficient draw on an N x K completed matrix; Arg(0) = R, Arg(1) = 0 dense / 1 block.
void BM_CoeffDraw(benchmark::State& state) {
  const auto R = static_cast<Eigen::Index>(state.range(0));
  const bool block = state.range(1) != 0;
  const Eigen::Index N = 100, K = 100;
  const int L = 15;
  Rng rng(1);
  const SplineDesign d = make_spline_design(TimeGrid::unit_fractions(K), L, 3);
  const Eigen::MatrixXd V = rng.normal_matrix(N, R);
  const Eigen::MatrixXd X = V * rng.normal_matrix(R, L) * d.theta + rng.normal_matrix(N, K);
  const CoefficientPosterior post(d, R, 0.0,
                                  block ? CoefficientPosterior::Route::block : CoefficientPosterior::Route::dense);
  const Eigen::MatrixXd cross = V.transpose() * X * d.theta.transpose();
  const Eigen::MatrixXd gram = V.transpose() * V;
  for (auto _ : state) benchmark::DoNotOptimize(post.draw(cross, gram, 1.0, 0.1, rng));
}
BENCHMARK(BM_CoeffDraw)->ArgsProduct({{2, 8, 16, 32}, {0, 1}})->Unit(benchmark::kMicrosecond);

// Full single-level chain; reported per Gibbs iteration.
void BM_SingleChainIteration(benchmark::State& state) {
  const auto N = static_cast<Eigen::Index>(state.range(0));
  SimScenario sc;
  sc.N = N;
  sc.K = 100;
  sc.eigen_values = single_level_eigenvalues();
  Rng rng(2);
  const SingleSample s = generate_single(sc, rng);
  const MaskMatrix mask = apply_missingness(N, 100, 0.8, 2, rng);
  const TimeGrid grid = TimeGrid::unit_fractions(100);
  const ObservedFunctionalMatrix data{s.observed, mask, grid};
  const SplineDesign d = make_spline_design(grid, 15, 3);
  McmcConfig m;
  m.burn_in = 0;
  m.draws = 50;
  m.thinning = 1;
  for (auto _ : state) benchmark::DoNotOptimize(run_single_chain(data, 8, d, m));
  state.SetItemsProcessed(state.iterations() * m.draws);
}
BENCHMARK(BM_SingleChainIteration)->Arg(100)->Arg(300)->Unit(benchmark::kMillisecond);

// Multiway chain sweeps on N x J x K tensors.
void BM_MultiwaySweep(benchmark::State& state) {
  SimScenario sc;
  sc.kind = ScenarioKind::multiway_lowrank;
  sc.N = 100;
  sc.J = static_cast<Eigen::Index>(state.range(0));
  sc.K = 100;
  sc.eigen_values = multiway_factor_variances();
  Rng rng(3);
  const MultiwaySample s = generate_multiway(sc, rng);
  const MaskMatrix mask = apply_missingness(sc.N, sc.J, sc.K, 0.8, 2, rng);
  const TimeGrid grid = TimeGrid::unit_fractions(100);
  const ObservedFunctionalTensor data{s.observed, mask, grid};
  const SplineDesign d = make_spline_design(grid, 15, 3);
  McmcConfig m;
  m.burn_in = 0;
  m.draws = 20;
  m.thinning = 1;
  m.prior.score_precision = 0.01;
  for (auto _ : state) benchmark::DoNotOptimize(run_multiway_chain(data, 4, d, m));
  state.SetItemsProcessed(state.iterations() * m.draws);
}
BENCHMARK(BM_MultiwaySweep)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
