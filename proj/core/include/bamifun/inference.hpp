#pragma once

#include "bamifun/single_gibbs.hpp"

#include <optional>
#include <vector>

namespace bamifun {

/// Linear interpolation between order statistics at the 1-based position h = p (n + 1)
/// (Hyndman-Fan type 6), clamped to the sample range: q = x_(floor h) + (h - floor h)
/// (x_(floor h + 1) - x_(floor h)). For continuous draws the interval between the p and 1 - p
/// positions has expected probability content 1 - 2p. `sorted` must be ascending.
double empirical_quantile(const std::vector<double>& sorted, double p);

/// Entrywise summaries in the archive's N x (J * K) layout. Observed cells carry the observed value
/// in all three matrices.
struct EntryIntervals {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd lower;
  Eigen::MatrixXd upper;
  double level = 0.95;
};

/// Posterior mean and equal-tailed (1 -+ level) / 2 quantile bounds for every cell with mask = 0.
EntryIntervals entry_credible_intervals(const DrawArchive& archive, const MaskMatrix& mask, double level = 0.95);

struct PooledFunctional {
  std::vector<double> grid;
  Eigen::VectorXd estimate;     ///< pooled mean across imputations
  Eigen::VectorXd within_var;   ///< V_W
  Eigen::VectorXd between_var;  ///< V_B
  Eigen::VectorXd total_var;    ///< V_T = V_W + (1 + 1/S) V_B
  Eigen::VectorXd dof;          ///< +inf where V_B = 0
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  int imputations = 0;
  double level = 0.95;
};

enum class DofRule {
  squared,     ///< nu = (S - 1) (1 + V_W / ((1 + 1/S) V_B))^2
  as_printed,  ///< nu = (S - 1) (1 + V_W / ((1 + 1/S) V_B))
};

/// Rubin's rules over S imputations; rows of `estimates` and `variances` are imputations, columns
/// grid points.
PooledFunctional pool_rubin(const Eigen::MatrixXd& estimates, const Eigen::MatrixXd& variances, double level = 0.95,
                            DofRule rule = DofRule::squared);

enum class SofrVariance {
  sandwich,  ///< sigma^2 theta^T A^{-1} C^T C A^{-1} theta, A = C^T C + lambda P
  bayesian,  ///< sigma^2 theta^T A^{-1} theta
};

struct SofrOptions {
  std::optional<double> smooth;  ///< lambda; empty = generalized cross-validation
  SofrVariance variance = SofrVariance::sandwich;
  int gcv_points = 20;
};

struct SofrFit {
  Eigen::VectorXd coeff;          ///< beta-hat on the grid (K)
  Eigen::VectorXd pointwise_var;  ///< K
  Eigen::VectorXd basis_coeffs;   ///< L
  double smooth_param = 0.0;
  double intercept = 0.0;
  double residual_var = 0.0;
  double edf = 0.0;
};

/// Penalized scalar-on-function regression y_i = a + (1/K) sum_k beta(t_k) X_ik + e_i with
/// beta = theta^T b. Minimizes ||y_c - C_c b||^2 + lambda b^T P b with C = X theta^T / K
/// (C_c, y_c centered for the intercept). The residual variance is RSS / (N - edf - 1).
SofrFit fit_sofr(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const SplineDesign& design_beta,
                 const SofrOptions& options = {});

/// fit_sofr on every retained dataset (single-level archives only), pooled with pool_rubin.
PooledFunctional pooled_sofr(const DrawArchive& archive, const Eigen::VectorXd& y, const SplineDesign& design_beta,
                             const SofrOptions& options = {}, double level = 0.95, DofRule rule = DofRule::squared);

}  // namespace bamifun
