#pragma once

#include "bamifun/multilinear.hpp"
#include "bamifun/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace bamifun {

/// 1 = observed, 0 = missing.
using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// N x K values with an observation mask. Values under mask = 0 are never read by the likelihood.
struct ObservedFunctionalMatrix {
  Eigen::MatrixXd values;
  MaskMatrix mask;
  TimeGrid grid;

  Eigen::Index subjects() const { return values.rows(); }
  Eigen::Index grid_size() const { return values.cols(); }

  /// Shape checks plus "every row has an observation"; rows with a single observation warn.
  void validate() const;
};

/// Hyperparameters of optional proper priors. The defaults are the flat / Jeffreys priors of the
/// imputation model; non-zero values exist for prior-to-posterior calibration runs.
struct PriorConfig {
  double score_precision = 0.0;  ///< rows of V ~ N(0, I / score_precision); 0 = flat
  double noise_shape = 0.0;      ///< sigma^2 ~ IG(noise_shape, noise_rate); (0, 0) = Jeffreys
  double noise_rate = 0.0;
  double smooth_shape = 0.0;     ///< sigma_B^2 ~ IG(smooth_shape, smooth_rate); (0, 0) = Jeffreys
  double smooth_rate = 0.0;
  double coeff_ridge = 0.0;      ///< coefficient prior precision (P + ridge I) / sigma_B^2
};

struct McmcConfig {
  int burn_in = 500;
  int draws = 100;  ///< retained draws S
  int thinning = 5;
  std::uint64_t seed = 1;
  /// When set, sigma_B^2 is held at this value instead of being sampled.
  std::optional<double> fixed_smooth_var;
  bool rescale = true;
  /// After rescaling, rotate (V, B) so the eigenfunctions are orthonormal and the score columns
  /// are ordered by variance (see align_factors).
  bool align = true;
  /// Subtract observed column means before sampling and add them back to every output.
  bool center = false;
  PriorConfig prior;

  /// Shorter chains used inside cross-validation loops.
  static McmcConfig cross_validation();
  void validate() const;
};

struct SingleChainState {
  Eigen::MatrixXd scores;  ///< V, N x R
  Eigen::MatrixXd coeffs;  ///< B, R x L; eigenfunctions are rows of B * theta
  double noise_var = 1.0;
  double smooth_var = 1.0;
  Eigen::MatrixXd completed;
};

/// One retained parameter draw. `features` (W) is empty for single-level chains.
struct ParameterDraw {
  Eigen::MatrixXd scores;
  Eigen::MatrixXd features;
  Eigen::MatrixXd coeffs;
  double noise_var = 0.0;
  double smooth_var = 0.0;
};

/// Retained completed datasets of a chain. Each dataset is an N x (J * K) matrix in the Tensor3
/// mode-1 layout; single-level archives have J = 1 so datasets are plain N x K matrices.
struct DrawArchive {
  Eigen::Index subjects = 0;
  Eigen::Index features = 1;
  Eigen::Index grid_size = 0;
  MaskMatrix mask;
  std::vector<Eigen::MatrixXd> datasets;
  std::vector<ParameterDraw> params;

  int rank = 0;
  int basis_size = 0;
  int burn_in = 0;
  int thinning = 1;
  std::uint64_t seed = 0;

  std::size_t size() const { return datasets.size(); }
  Eigen::MatrixXd posterior_mean() const;
};

/// Starting point for a chain: U is K x R (eigenfunctions on the grid), V is N x R.
struct InitialFactors {
  Eigen::MatrixXd U;
  Eigen::MatrixXd V;
};

/// Draws every row of the N x R score matrix from N((U^T U)^{-1} U^T x_i, sigma^2 (U^T U)^{-1}).
/// `prior_precision` adds an N(0, I / prior_precision) prior on each row.
Eigen::MatrixXd draw_scores(const Eigen::MatrixXd& completed, const Eigen::MatrixXd& U, double noise_var,
                            Rng& rng, double prior_precision = 0.0);

/// Generic form of the score draw: rows of Y regressed on the columns of G.
Eigen::MatrixXd draw_regression_rows(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& G, double noise_var,
                                     Rng& rng, double prior_precision = 0.0, const char* what = "draw_scores");

/// Gaussian full conditional of Vec(B) for the model Vec(X) = (theta^T kron V) Vec(B) + E with
/// the penalty prior. The likelihood enters only through the sufficient statistics
/// cross = V^T X theta^T (R x L) and gram = V^T V (R x R), using
/// (theta^T kron V)^T (theta^T kron V) = (theta theta^T) kron (V^T V).
///
/// Vec(B) stacks the columns of the R x L matrix B, so the prior precision is
/// (P kron I_R) / sigma_B^2. Two factorizations are available: a dense Cholesky of the
/// RL x RL precision, and a block route that simultaneously diagonalizes theta theta^T and P
/// (generalized eigenproblem, computed once per design) and leaves L independent R x R blocks.
class CoefficientPosterior {
 public:
  enum class Route { automatic, dense, block };

  CoefficientPosterior(const SplineDesign& design, Eigen::Index rank, double ridge = 0.0,
                       Route route = Route::automatic);

  Eigen::MatrixXd draw(const Eigen::MatrixXd& cross, const Eigen::MatrixXd& gram, double noise_var,
                       double smooth_var, Rng& rng) const;
  /// Posterior mean of B (R x L).
  Eigen::MatrixXd mean(const Eigen::MatrixXd& cross, const Eigen::MatrixXd& gram, double noise_var,
                       double smooth_var) const;

  bool uses_block_route() const { return block_; }

 private:
  Eigen::MatrixXd solve(const Eigen::MatrixXd& cross, const Eigen::MatrixXd& gram, double noise_var,
                        double smooth_var, const Eigen::MatrixXd* noise) const;

  Eigen::Index rank_;
  Eigen::MatrixXd basis_gram_;  // theta theta^T
  Eigen::MatrixXd penalty_;     // P + ridge I
  bool block_ = false;
  Eigen::MatrixXd eigvecs_;     // Q with Q^T G Q = I, Q^T P Q = diag(eigvals_)
  Eigen::VectorXd eigvals_;
};

Eigen::MatrixXd draw_coeffs(const Eigen::MatrixXd& completed, const Eigen::MatrixXd& V, double noise_var,
                            double smooth_var, const SplineDesign& design, Rng& rng, double ridge = 0.0);

/// sigma^2 ~ IG(shape0 + n/2, rate0 + ||X - fitted||_F^2 / 2), n = number of cells.
double draw_noise_var(const Eigen::MatrixXd& completed, const Eigen::MatrixXd& fitted, Rng& rng,
                      const PriorConfig& prior = {});

/// sigma_B^2 ~ IG(shape0 + RL/2, rate0 + sum_r B_r (P + ridge I) B_r^T). The rate carries no 1/2,
/// matching the exp(-b^T P b / sigma_B^2) form of the coefficient prior.
double draw_smooth_var(const Eigen::MatrixXd& B, const SplineDesign& design, Rng& rng,
                       const PriorConfig& prior = {});

/// Observed cells copied, missing cells drawn from N(fitted, sigma^2). Works on any pair of
/// equally shaped value/mask matrices (tensors are passed as mode-1 unfoldings).
Eigen::MatrixXd impute_entries(const Eigen::MatrixXd& fitted, double noise_var, const Eigen::MatrixXd& values,
                               const MaskMatrix& mask, Rng& rng);

/// Observed cells from `values`, the rest from `fill`.
Eigen::MatrixXd fill_missing(const Eigen::MatrixXd& values, const MaskMatrix& mask, const Eigen::MatrixXd& fill);

Eigen::MatrixXd impute_missing(const Eigen::MatrixXd& fitted, double noise_var,
                               const ObservedFunctionalMatrix& data, Rng& rng);

/// Normalizes every eigenfunction (row of B * theta) to unit Euclidean norm and moves the scale
/// into the matching score column, so V * B * theta is unchanged.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> rescale(const Eigen::MatrixXd& V, const Eigen::MatrixXd& B,
                                                    const SplineDesign& design);

/// Rotates the factors so that B' theta has orthonormal rows and V' has orthogonal columns in
/// decreasing norm order, leaving V' B' theta = V B theta. Without it the flat score prior lets
/// the eigenfunctions drift towards collinearity over long chains.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> align_factors(const Eigen::MatrixXd& V, const Eigen::MatrixXd& B,
                                                          const SplineDesign& design);

/// Least-squares spline coefficients (R x L) for eigenfunctions given on the grid (K x R).
Eigen::MatrixXd project_to_basis(const Eigen::MatrixXd& U, const SplineDesign& design, double penalty_weight = 0.0);

/// Full data-augmentation Gibbs chain for single-level functional data. When `init` is empty the
/// chain starts from init_single(). Per iteration: scores, coefficients, sigma^2, sigma_B^2,
/// imputation of missing cells, rescaling.
DrawArchive run_single_chain(const ObservedFunctionalMatrix& data, int R, const SplineDesign& design,
                             const McmcConfig& mcmc, const std::optional<InitialFactors>& init = std::nullopt);

/// Observed column means (global observed mean for columns without observations).
Eigen::RowVectorXd observed_column_means(const Eigen::MatrixXd& values, const MaskMatrix& mask);

}  // namespace bamifun
