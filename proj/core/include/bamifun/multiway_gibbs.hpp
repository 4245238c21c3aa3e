#pragma once

#include "bamifun/single_gibbs.hpp"

namespace bamifun {

/// N x J x K values with an observation mask stored in the same mode-1 layout (N x JK).
struct ObservedFunctionalTensor {
  Tensor3 values;
  MaskMatrix mask;
  TimeGrid grid;

  /// Shapes, plus every subject-feature curve must have an observation.
  void validate() const;
};

struct MultiwayChainState {
  Eigen::MatrixXd subj;    ///< V, N x R
  Eigen::MatrixXd feat;    ///< W, J x R
  Eigen::MatrixXd coeffs;  ///< B, R x L; u_r is row r of B * theta
  double noise_var = 1.0;
  double smooth_var = 1.0;
  Tensor3 completed;
};

/// Row-wise conditional draw for Y = F G^T + E under a flat prior on F:
/// row i ~ N((G^T G)^{-1} G^T y_i, sigma^2 (G^T G)^{-1}).
/// Subject factors use Y = X_(1), G = khatri_rao(U, W); feature factors use Y = X_(2),
/// G = khatri_rao(U, V). `prior_precision` > 0 replaces the flat prior by N(0, I / prior_precision).
Eigen::MatrixXd draw_factor_rows(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& G, double noise_var, Rng& rng,
                                 double prior_precision = 0.0);

/// Full conditional of Vec(B) under Vec(X_(3)^T) = (theta^T kron (W . V)) Vec(B) + E, with
/// (W . V) = khatri_rao(W, V). Sufficient statistics: (W . V)^T X_(3)^T theta^T and
/// (W . V)^T (W . V) = (W^T W) o (V^T V).
Eigen::MatrixXd draw_multiway_coeffs(const Tensor3& completed, const Eigen::MatrixXd& V, const Eigen::MatrixXd& W,
                                     double noise_var, double smooth_var, const SplineDesign& design, Rng& rng);

/// Sufficient statistics used by draw_multiway_coeffs: {cross (R x L), gram (R x R)}.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> multiway_coeff_statistics(const Tensor3& completed,
                                                                      const Eigen::MatrixXd& V,
                                                                      const Eigen::MatrixXd& W,
                                                                      const SplineDesign& design);

/// sigma^2 ~ IG(NJK / 2, ||X - fitted||_F^2 / 2).
double draw_multiway_noise_var(const Tensor3& completed, const Tensor3& fitted, Rng& rng);

/// Gives v_r, w_r and u_r = (B theta)_r the common norm (|v_r| |w_r| |u_r|)^{1/3}; the fitted tensor
/// is unchanged.
MultiwayChainState rebalance_norms(MultiwayChainState state, const SplineDesign& design);

/// Fitted tensor [[V, W, (B theta)^T]].
Tensor3 multiway_fitted(const Eigen::MatrixXd& V, const Eigen::MatrixXd& W, const Eigen::MatrixXd& B,
                        const SplineDesign& design);

/// Starting state: slice-mean fill of missing cells, `als_sweeps` CP alternating least squares
/// sweeps at rank R, U projected onto the spline space, norms rebalanced.
MultiwayChainState init_multiway(const ObservedFunctionalTensor& data, int R, const SplineDesign& design, Rng& rng,
                                 int als_sweeps = 10);

/// Data-augmentation Gibbs chain for the functional CP model. Sweep: V rows, W rows, B, sigma^2,
/// sigma_B^2, imputation, norm rebalancing. Archive datasets are mode-1 unfoldings (N x JK).
DrawArchive run_multiway_chain(const ObservedFunctionalTensor& data, int R, const SplineDesign& design,
                               const McmcConfig& mcmc);

}  // namespace bamifun
