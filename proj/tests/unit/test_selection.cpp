#include "bamifun/errors.hpp"
#include "bamifun/harness.hpp"
#include "bamifun/selection.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace bamifun;

namespace {

double abs_cos(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return std::abs(a.dot(b)) / (a.norm() * b.norm()); }

}  // namespace

TEST(InitSingleOracle, RecoversSplineRankOneDirection) {
  Rng rng(1);
  const TimeGrid grid = TimeGrid::linspace(40);
  const SplineDesign d = make_spline_design(grid, 10, 3);
  Eigen::VectorXd u = (rng.normal_matrix(1, 10) * d.theta).transpose();
  u.normalize();
  const Eigen::MatrixXd X = rng.normal_matrix(25, 1) * u.transpose();
  const InitialFactors f = init_single(ObservedFunctionalMatrix{X, MaskMatrix::Ones(25, 40), grid}, 1, d);
  ASSERT_EQ(f.U.rows(), 40);
  ASSERT_EQ(f.V.rows(), 25);
  EXPECT_GT(abs_cos(f.U.col(0), u), 0.999);
  EXPECT_NEAR(f.U.col(0).norm(), 1.0, 1e-12);
}

TEST(InitSingle, ConstantDataGivesConstantComponent) {
  const TimeGrid grid = TimeGrid::linspace(30);
  const SplineDesign d = make_spline_design(grid, 8, 3);
  const Eigen::MatrixXd X = Eigen::MatrixXd::Constant(10, 30, 2.5);
  const InitialFactors f = init_single(ObservedFunctionalMatrix{X, MaskMatrix::Ones(10, 30), grid}, 1, d);
  EXPECT_GT(abs_cos(f.U.col(0), Eigen::VectorXd::Ones(30)), 1.0 - 1e-9);
}

TEST(InitSingleOracle, FullRankReconstructsSmoothData) {
  Rng rng(2);
  const TimeGrid grid = TimeGrid::linspace(30);
  const SplineDesign d = make_spline_design(grid, 10, 3);
  const Eigen::MatrixXd X = rng.normal_matrix(4, 10) * d.theta;  // rows already in the spline space
  const InitialFactors f = init_single(ObservedFunctionalMatrix{X, MaskMatrix::Ones(4, 30), grid}, 4, d);
  // The SVD of X spans its row space; the light penalty leaves a small projection residual.
  const Eigen::MatrixXd recon = f.V * f.U.transpose();
  EXPECT_LT((recon - X).norm() / X.norm(), 1e-2);
}

TEST(InitSingle, RejectsRankAboveDimensions) {
  const TimeGrid grid = TimeGrid::linspace(6);
  const SplineDesign d = make_spline_design(grid, 5, 3);
  const ObservedFunctionalMatrix data{Eigen::MatrixXd::Ones(3, 6), MaskMatrix::Ones(3, 6), grid};
  EXPECT_THROW(init_single(data, 4, d), InvalidConfiguration);
  EXPECT_THROW(init_single(data, 0, d), InvalidConfiguration);
}

TEST(RankGrid, ThreeBelowInitialRank) { EXPECT_EQ(default_rank_grid(10), (std::vector<int>{7, 8, 9})); }

TEST(RankGrid, ClippedAndDeduplicated) {
  EXPECT_EQ(default_rank_grid(3), (std::vector<int>{1, 2}));
  EXPECT_EQ(default_rank_grid(2), (std::vector<int>{1}));
  WarningCapture cap;
  EXPECT_EQ(default_rank_grid(1), (std::vector<int>{1}));
  EXPECT_TRUE(cap.contains("R_init"));
}

TEST(RankPve, CountsLeadingComponents) {
  Rng rng(3);
  const TimeGrid grid = TimeGrid::linspace(20);
  const Eigen::MatrixXd X = rng.normal_matrix(50, 3) * rng.normal_matrix(3, 20) + 1e-4 * rng.normal_matrix(50, 20);
  const ObservedFunctionalMatrix data{X, MaskMatrix::Ones(50, 20), grid};
  EXPECT_EQ(estimate_rank_pve(data, 0.99), 3);
  EXPECT_THROW(estimate_rank_pve(data, 0.0), InvalidConfiguration);
}

TEST(ValidationSplit, SubsetOfObservedAndSizes) {
  Rng rng(4);
  const MaskMatrix mask = apply_missingness(40, 25, 0.6, 2, rng);
  const ValidationSplit split = draw_validation_split(mask, 0.4, rng);
  const int observed = mask.cast<int>().sum();
  EXPECT_EQ(split.validation.cast<int>().sum(), static_cast<int>(std::llround(0.4 * observed)));
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    EXPECT_GT(split.training.row(i).cast<int>().sum(), 0);
    for (Eigen::Index k = 0; k < mask.cols(); ++k) {
      EXPECT_EQ(split.training(i, k) + split.validation(i, k), mask(i, k));
    }
  }
}

TEST(ValidationSplit, ImpossibleSplitFails) {
  Rng rng(5);
  MaskMatrix mask = MaskMatrix::Zero(3, 4);
  mask.col(0).setOnes();
  EXPECT_THROW(draw_validation_split(mask, 0.9, rng), SplitFailure);
}

TEST(Selection, TieGoesToFirstOrLast) {
  std::vector<CandidateScore> table(3);
  table[0] = {1.0, 0.5, {}};
  table[1] = {2.0, 0.5 + 5e-13, {}};
  table[2] = {3.0, 0.7, {}};
  EXPECT_EQ(best_candidate(table), 0u);
  EXPECT_EQ(best_candidate(table, true), 1u);
  table[1].mse = 0.4;
  EXPECT_EQ(best_candidate(table), 1u);
}

TEST(Selection, SingletonGridsReturnUnchanged) {
  Rng rng(6);
  const TimeGrid grid = TimeGrid::linspace(10);
  const SplineDesign d = make_spline_design(grid, 5, 3);
  const ObservedFunctionalMatrix data{rng.normal_matrix(8, 10), MaskMatrix::Ones(8, 10), grid};
  EXPECT_EQ(cross_validate_rank(data, {4}, d, McmcConfig::cross_validation()).rank, 4);
  EXPECT_EQ(grid_select_smooth_var(data, {0.3}, 2, d, McmcConfig::cross_validation()).smooth_var, 0.3);
  EXPECT_THROW(cross_validate_rank(data, {}, d, McmcConfig::cross_validation()), InvalidConfiguration);
  EXPECT_THROW(grid_select_smooth_var(data, {}, 2, d, McmcConfig::cross_validation()), InvalidConfiguration);
  EXPECT_THROW(grid_select_smooth_var(data, {-1.0}, 2, d, McmcConfig::cross_validation()), InvalidConfiguration);
}

TEST(Selection, DefaultSmoothCandidates) {
  EXPECT_EQ(default_smooth_candidates(), (std::vector<double>{0.001, 0.01, 0.05, 0.1, 1.0}));
}

TEST(Selection, TableMatchesRecomputationAndIsDeterministic) {
  SimScenario sc;
  sc.N = 30;
  sc.K = 30;
  sc.eigen_values = {2.0, 1.0};
  sc.noise_var = 0.1;
  Rng rng(7);
  const SingleSample sample = generate_single(sc, rng);
  const MaskMatrix mask = apply_missingness(30, 30, 0.5, 2, rng);
  const TimeGrid grid = TimeGrid::unit_fractions(30);
  const ObservedFunctionalMatrix data{sample.observed, mask, grid};
  const SplineDesign d = make_spline_design(grid, 8, 3);
  McmcConfig m = McmcConfig::cross_validation();
  m.burn_in = 60;
  m.draws = 20;
  m.seed = 11;
  const RankSelection a = cross_validate_rank(data, {1, 2, 3}, d, m);
  const RankSelection b = cross_validate_rank(data, {3, 2, 1, 2}, d, m);
  ASSERT_EQ(a.table.size(), 3u);
  EXPECT_EQ(a.rank, b.rank);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(a.table[c].mse, b.table[c].mse);
    double sse = 0.0;
    int n = 0;
    for (Eigen::Index i = 0; i < 30; ++i)
      for (Eigen::Index k = 0; k < 30; ++k) {
        if (!a.split.validation(i, k)) continue;
        ASSERT_TRUE(mask(i, k));
        sse += std::pow(sample.observed(i, k) - a.table[c].posterior_mean(i, k), 2);
        ++n;
      }
    EXPECT_NEAR(a.table[c].mse, sse / n, 1e-12);
  }
}

TEST(RankSelectionOracle, NoiselessRankTwoSelectsTwo) {
  int hits = 0;
  for (int run = 0; run < 20; ++run) {
    SimScenario sc;
    sc.N = 60;
    sc.K = 50;
    sc.eigen_values = {2.0, 1.0};
    sc.noise_var = 0.0;
    Rng rng(replicate_seed(4242, static_cast<std::uint64_t>(run)));
    const SingleSample sample = generate_single(sc, rng);
    const MaskMatrix mask = apply_missingness(60, 50, 0.2, 2, rng);
    const TimeGrid grid = TimeGrid::unit_fractions(50);
    McmcConfig m = McmcConfig::cross_validation();
    m.seed = 100 + static_cast<std::uint64_t>(run);
    WarningCapture quiet;
    const RankSelection sel =
        cross_validate_rank(ObservedFunctionalMatrix{sample.observed, mask, grid}, {1, 2, 3}, make_spline_design(grid, 10, 3), m);
    hits += sel.rank == 2;
  }
  EXPECT_GE(hits, 18);
}

TEST(SmoothSelectionOracle, PolynomialSignalsAvoidSmallestCandidate) {
  int avoided = 0;
  for (int run = 0; run < 20; ++run) {
    Rng rng(900 + static_cast<std::uint64_t>(run));
    const Eigen::Index N = 30, K = 30;
    const TimeGrid grid = TimeGrid::unit_fractions(K);
    Eigen::MatrixXd X(N, K);
    for (Eigen::Index i = 0; i < N; ++i) {
      const double a = rng.normal(), b = rng.normal(0.0, 2.0), c = rng.normal(0.0, 2.0);
      for (Eigen::Index k = 0; k < K; ++k) {
        const double t = grid[static_cast<std::size_t>(k)];
        X(i, k) = a + b * t + c * t * t + 0.3 * rng.normal();
      }
    }
    const MaskMatrix mask = apply_missingness(N, K, 0.5, 2, rng);
    McmcConfig m = McmcConfig::cross_validation();
    m.burn_in = 100;
    m.draws = 30;
    m.seed = static_cast<std::uint64_t>(run) + 1;
    WarningCapture quiet;
    const SmoothSelection sel = grid_select_smooth_var(ObservedFunctionalMatrix{X, mask, grid}, default_smooth_candidates(),
                                                       3, make_spline_design(grid, 10, 3), m);
    avoided += sel.smooth_var > 0.001;
  }
  EXPECT_GE(avoided, 16);
}
