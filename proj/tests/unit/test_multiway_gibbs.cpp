#include "bamifun/errors.hpp"
#include "bamifun/multiway_gibbs.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace bamifun;

namespace {

Tensor3 random_tensor(Rng& rng, Eigen::Index N, Eigen::Index J, Eigen::Index K) {
  Tensor3 t(N, J, K);
  t.values() = rng.normal_matrix(N * J * K, 1);
  return t;
}

std::vector<double> flat(const Tensor3& t) { return {t.values().data(), t.values().data() + t.size()}; }

MultiwayChainState random_state(Rng& rng, Eigen::Index N, Eigen::Index J, Eigen::Index R, Eigen::Index L) {
  MultiwayChainState s;
  s.subj = rng.normal_matrix(N, R);
  s.feat = rng.normal_matrix(J, R);
  s.coeffs = rng.normal_matrix(R, L);
  return s;
}

double fitted_gap(const MultiwayChainState& a, const MultiwayChainState& b, const SplineDesign& d) {
  const Tensor3 ta = multiway_fitted(a.subj, a.feat, a.coeffs, d);
  const Tensor3 tb = multiway_fitted(b.subj, b.feat, b.coeffs, d);
  return (ta.values() - tb.values()).norm();
}

McmcConfig chain(std::uint64_t seed, int burn = 100, int draws = 40, int thin = 2) {
  McmcConfig m;
  m.burn_in = burn;
  m.draws = draws;
  m.thinning = thin;
  m.seed = seed;
  m.prior.score_precision = 0.01;
  return m;
}

}  // namespace

TEST(ObservedTensor, ValidateChecks) {
  ObservedFunctionalTensor d{Tensor3(2, 3, 4), MaskMatrix::Ones(2, 12), TimeGrid::linspace(4)};
  EXPECT_NO_THROW(d.validate());
  for (Eigen::Index k = 0; k < 4; ++k) d.mask(1, 2 + 3 * k) = 0;
  EXPECT_THROW(d.validate(), InvalidInput);
  d.mask.setOnes();
  d.values(0, 0, 0) = INFINITY;
  EXPECT_THROW(d.validate(), InvalidInput);
  d.values(0, 0, 0) = 0.0;
  d.mask = MaskMatrix::Ones(2, 11);
  EXPECT_THROW(d.validate(), InvalidInput);
}

TEST(DrawFactorRows, OrthonormalZeroNoiseLimit) {
  Rng rng(1);
  const Eigen::MatrixXd G =
      Eigen::HouseholderQR<Eigen::MatrixXd>(rng.normal_matrix(12, 3)).householderQ() * Eigen::MatrixXd::Identity(12, 3);
  const Eigen::MatrixXd Y = rng.normal_matrix(4, 12);
  EXPECT_LT((draw_factor_rows(Y, G, 0.0, rng) - Y * G).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(DrawFactorRows, SingleFeatureReducesToScores) {
  Rng data(2);
  const Eigen::MatrixXd U = data.normal_matrix(10, 3);
  const Eigen::MatrixXd X = data.normal_matrix(6, 10);
  const Eigen::MatrixXd G = khatri_rao(U, Eigen::MatrixXd::Ones(1, 3));
  Rng a(99), b(99);
  EXPECT_EQ(draw_factor_rows(X, G, 0.4, a), draw_scores(X, U, 0.4, b));
}

TEST(DrawFactorRowsOracle, MonteCarloConditionalMean) {
  Rng rng(3);
  const Eigen::MatrixXd Y = rng.normal_matrix(5, 12);
  const Eigen::MatrixXd G = rng.normal_matrix(12, 2);
  const double s2 = 0.5;
  const Eigen::MatrixXd gtg_inv = (G.transpose() * G).inverse();
  const Eigen::MatrixXd mean_ref = Y * G * gtg_inv;
  const int n = 20000;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(5, 2);
  for (int s = 0; s < n; ++s) sum += draw_factor_rows(Y, G, s2, rng);
  const Eigen::MatrixXd mean = sum / n;
  for (int i = 0; i < 5; ++i)
    for (int r = 0; r < 2; ++r)
      EXPECT_LT(std::abs(mean(i, r) - mean_ref(i, r)), 4.0 * std::sqrt(s2 * gtg_inv(r, r) / n));
}

TEST(DrawFactorRows, CollinearDesignThrows) {
  Rng rng(4);
  Eigen::MatrixXd G(6, 2);
  G.col(0).setOnes();
  G.col(1).setConstant(2.0);
  EXPECT_THROW(draw_factor_rows(Eigen::MatrixXd::Ones(2, 6), G, 1.0, rng), SingularDesign);
}

TEST(MultiwayCoeffs, SingleFeatureReducesToSingleLevel) {
  Rng rng(5);
  const SplineDesign d = make_spline_design(TimeGrid::linspace(15), 6, 3);
  const Eigen::MatrixXd X = rng.normal_matrix(7, 15), V = rng.normal_matrix(7, 2);
  const Tensor3 t = Tensor3::from_mode1(X, 1, 15);
  const auto [cross, gram] = multiway_coeff_statistics(t, V, Eigen::MatrixXd::Ones(1, 2), d);
  EXPECT_LT((cross - V.transpose() * X * d.theta.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((gram - V.transpose() * V).cwiseAbs().maxCoeff(), 1e-12);
  Rng a(7), b(7);
  const Eigen::MatrixXd Bm = draw_multiway_coeffs(t, V, Eigen::MatrixXd::Ones(1, 2), 0.6, 0.3, d, a);
  const Eigen::MatrixXd Bs = draw_coeffs(X, V, 0.6, 0.3, d, b);
  EXPECT_LT((Bm - Bs).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(MultiwayCoeffs, InfinitePenaltyGivesZero) {
  Rng rng(6);
  SplineDesign d = make_spline_design(TimeGrid::linspace(8), 5, 3);
  d.penalty += 0.1 * Eigen::MatrixXd::Identity(5, 5);
  const Tensor3 t = random_tensor(rng, 4, 3, 8);
  EXPECT_LT(draw_multiway_coeffs(t, rng.normal_matrix(4, 2), rng.normal_matrix(3, 2), 1.0, 1e-12, d, rng).norm(), 1e-4);
}

TEST(MultiwayCoeffsOracle, DenseBruteForcePosterior) {
  Rng rng(7);
  const int N = 4, J = 3, K = 8, R = 2, L = 5;
  const SplineDesign d = make_spline_design(TimeGrid::linspace(K), L, 3);
  const Tensor3 t = random_tensor(rng, N, J, K);
  const Eigen::MatrixXd V = rng.normal_matrix(N, R), W = rng.normal_matrix(J, R);
  const double s2 = 0.9, sb = 0.25;
  const auto ref = oracle::dense_multiway_coeff_posterior(flat(t), N, J, K, V, W, d.theta, d.penalty, s2, sb);
  const auto [cross, gram] = multiway_coeff_statistics(t, V, W, d);
  const CoefficientPosterior post(d, R);
  EXPECT_LT((vec(post.mean(cross, gram, s2, sb)) - ref.mean).cwiseAbs().maxCoeff(), 1e-9);

  const int n = 20000;
  Eigen::MatrixXd draws(n, R * L);
  for (int s = 0; s < n; ++s) draws.row(s) = vec(draw_multiway_coeffs(t, V, W, s2, sb, d, rng)).transpose();
  const Eigen::VectorXd mean = draws.colwise().mean().transpose();
  for (int q = 0; q < R * L; ++q)
    EXPECT_LT(std::abs(mean(q) - ref.mean(q)), 4.0 * std::sqrt(ref.cov(q, q) / n)) << "component " << q;
}

TEST(MultiwayNoiseVarOracle, InverseGammaMean) {
  Rng rng(8);
  Tensor3 ones(2, 2, 2), zeros(2, 2, 2);
  ones.values().setOnes();
  zeros.values().setZero();
  std::vector<double> draws;
  for (int s = 0; s < 100000; ++s) draws.push_back(draw_multiway_noise_var(ones, zeros, rng));
  const auto m = oracle::moments(draws);
  // shape 4, rate 4: mean 4/3.
  EXPECT_LT(std::abs(m.mean - 4.0 / 3.0), 4.0 * m.se);
}

TEST(MultiwayNoiseVar, ZeroResidualAndReduction) {
  Rng rng(9);
  const Tensor3 t = random_tensor(rng, 3, 1, 5);
  {
    WarningCapture cap;
    EXPECT_LE(draw_multiway_noise_var(t, t, rng), 1e-10);
    EXPECT_TRUE(cap.contains("clamped"));
  }
  const Tensor3 f = random_tensor(rng, 3, 1, 5);
  Rng a(3), b(3);
  EXPECT_EQ(draw_multiway_noise_var(t, f, a), draw_noise_var(t.mode1(), f.mode1(), b));
}

TEST(Rebalance, BalancedStateIsFixed) {
  Rng rng(10);
  const SplineDesign d = make_spline_design(TimeGrid::linspace(20), 7, 3);
  const MultiwayChainState once = rebalance_norms(random_state(rng, 5, 3, 2, 7), d);
  const MultiwayChainState twice = rebalance_norms(once, d);
  EXPECT_LT((once.subj - twice.subj).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((once.feat - twice.feat).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((once.coeffs - twice.coeffs).cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::MatrixXd curves = once.coeffs * d.theta;
  for (int r = 0; r < 2; ++r) {
    EXPECT_NEAR(once.subj.col(r).norm(), once.feat.col(r).norm(), 1e-8);
    EXPECT_NEAR(once.subj.col(r).norm(), curves.row(r).norm(), 1e-8);
  }
}

TEST(Rebalance, GaugeInvariance) {
  Rng rng(11);
  const SplineDesign d = make_spline_design(TimeGrid::linspace(20), 7, 3);
  const MultiwayChainState base = random_state(rng, 5, 3, 2, 7);
  MultiwayChainState moved = base;
  moved.subj.col(1) *= 8.0;
  moved.coeffs.row(1) /= 8.0;
  const MultiwayChainState a = rebalance_norms(base, d), b = rebalance_norms(moved, d);
  EXPECT_LT((a.subj - b.subj).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.coeffs - b.coeffs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Rebalance, ZeroFactorIsDegenerate) {
  Rng rng(12);
  const SplineDesign d = make_spline_design(TimeGrid::linspace(20), 7, 3);
  MultiwayChainState s = random_state(rng, 5, 3, 2, 7);
  s.feat.col(0).setZero();
  EXPECT_THROW(rebalance_norms(s, d), DegenerateComponent);
}

// Property: fitted tensor unchanged, mode-1 and mode-3 fitted agree.
TEST(RebalanceProperty, FittedTensorInvariant) {
  Rng rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    const int N = 2 + trial % 5, J = 1 + trial % 4, K = 10 + trial % 7, R = 1 + trial % 3, L = 5 + trial % 4;
    const SplineDesign d = make_spline_design(TimeGrid::linspace(static_cast<std::size_t>(K)), L, 3);
    const MultiwayChainState s = random_state(rng, N, J, R, L);
    EXPECT_LT(fitted_gap(s, rebalance_norms(s, d), d), 1e-12 * (1.0 + multiway_fitted(s.subj, s.feat, s.coeffs, d).values().norm()));
    const Tensor3 fit = multiway_fitted(s.subj, s.feat, s.coeffs, d);
    const Eigen::MatrixXd U = (s.coeffs * d.theta).transpose();
    EXPECT_LT((fit.mode1() - s.subj * khatri_rao(U, s.feat).transpose()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((matricize(fit, 3) - U * khatri_rao(s.feat, s.subj).transpose()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(MultiwayChain, FullyObservedTensorIsCopied) {
  Rng rng(14);
  const SplineDesign d = make_spline_design(TimeGrid::linspace(15), 6, 3);
  const Tensor3 t = random_tensor(rng, 8, 3, 15);
  const ObservedFunctionalTensor data{t, MaskMatrix::Ones(8, 45), TimeGrid::linspace(15)};
  const DrawArchive a = run_multiway_chain(data, 2, d, chain(1, 20, 10, 1));
  ASSERT_EQ(a.size(), 10u);
  EXPECT_EQ(a.features, 3);
  for (const auto& ds : a.datasets) EXPECT_EQ(ds, t.mode1());
}

TEST(MultiwayChainOracle, RecoversNoiselessRankTwo) {
  Rng rng(15);
  const Eigen::Index N = 30, J = 4, K = 50;
  const TimeGrid grid = TimeGrid::unit_fractions(K);
  const SplineDesign d = make_spline_design(grid, 12, 3);
  Eigen::MatrixXd U(K, 2);
  for (Eigen::Index k = 0; k < K; ++k) {
    const double t = grid[static_cast<std::size_t>(k)];
    U(k, 0) = std::sin(M_PI * t) + 0.3;
    U(k, 1) = std::cos(2.0 * M_PI * t);
  }
  const Tensor3 truth = cp_reconstruct(2.0 * rng.normal_matrix(N, 2), rng.normal_matrix(J, 2), U);
  MaskMatrix mask(N, J * K);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index c = 0; c < J * K; ++c) mask(i, c) = (rng.uniform() < 0.3 && c >= J) ? 0 : 1;
  const DrawArchive a = run_multiway_chain(ObservedFunctionalTensor{truth, mask, grid}, 2, d, chain(2, 300, 100, 2));
  EXPECT_LT(oracle::relative_mse_loop(truth.mode1(), a.posterior_mean(), mask), 0.05);
}

TEST(MultiwayChain, DeterminismAndFidelity) {
  Rng rng(16);
  const TimeGrid grid = TimeGrid::linspace(20);
  const SplineDesign d = make_spline_design(grid, 8, 3);
  Tensor3 t = cp_reconstruct(rng.normal_matrix(10, 2), rng.normal_matrix(3, 2), (rng.normal_matrix(2, 8) * d.theta).transpose());
  t.values() += 0.2 * rng.normal_matrix(t.size(), 1);
  MaskMatrix mask(10, 60);
  for (Eigen::Index i = 0; i < 10; ++i)
    for (Eigen::Index c = 0; c < 60; ++c) mask(i, c) = (rng.uniform() < 0.5 && c >= 3) ? 0 : 1;
  const ObservedFunctionalTensor data{t, mask, grid};
  const DrawArchive a = run_multiway_chain(data, 2, d, chain(5));
  const DrawArchive b = run_multiway_chain(data, 2, d, chain(5));
  const DrawArchive c = run_multiway_chain(data, 2, d, chain(6));
  bool differs = false;
  for (std::size_t s = 0; s < a.size(); ++s) {
    EXPECT_EQ(a.datasets[s], b.datasets[s]);
    differs = differs || a.datasets[s] != c.datasets[s];
    for (Eigen::Index i = 0; i < 10; ++i)
      for (Eigen::Index col = 0; col < 60; ++col)
        if (mask(i, col)) ASSERT_EQ(a.datasets[s](i, col), t.mode1()(i, col));
  }
  EXPECT_TRUE(differs);
}

TEST(MultiwayChain, RejectsRankAboveBasis) {
  const TimeGrid grid = TimeGrid::linspace(10);
  const SplineDesign d = make_spline_design(grid, 5, 3);
  Tensor3 t(4, 2, 10);
  const ObservedFunctionalTensor data{t, MaskMatrix::Ones(4, 20), grid};
  EXPECT_THROW(run_multiway_chain(data, 6, d, McmcConfig{}), InvalidConfiguration);
}
