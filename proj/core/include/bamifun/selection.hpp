#pragma once

#include "bamifun/single_gibbs.hpp"

#include <vector>

namespace bamifun {

/// Starting factors for the single-level chain: column-mean fill, top-R right singular vectors,
/// penalized projection onto the spline space (weight 1e-4 * tr(theta theta^T) / tr(P)),
/// unit-norm renormalization, then V0 = X_filled * U0.
InitialFactors init_single(const ObservedFunctionalMatrix& data, int R, const SplineDesign& design);

/// {R_init - 3, R_init - 2, R_init - 1} clipped below at 1, deduplicated, ascending.
std::vector<int> default_rank_grid(int R_init);

/// Number of leading singular values of the column-mean-filled, column-centered matrix that
/// together explain a `pve` share of the total sum of squares. Stand-in for a frequentist FPCA
/// rank estimate when no R_init is supplied.
int estimate_rank_pve(const ObservedFunctionalMatrix& data, double pve = 0.99);

/// Observed entries partitioned into a training mask and a validation mask.
struct ValidationSplit {
  MaskMatrix training;
  MaskMatrix validation;
};

/// Moves round(fraction * #observed) uniformly chosen observed entries to the validation set,
/// re-drawing up to `max_attempts` times until every row keeps a training observation.
ValidationSplit draw_validation_split(const MaskMatrix& mask, double fraction, Rng& rng, int max_attempts = 10);

/// Mean squared error of `imputed` against `data.values` over validation entries.
double validation_mse(const Eigen::MatrixXd& values, const Eigen::MatrixXd& imputed, const MaskMatrix& validation);

struct CandidateScore {
  double candidate = 0.0;  ///< R (as a number) or sigma_B^2
  double mse = 0.0;
  Eigen::MatrixXd posterior_mean;
};

struct RankSelection {
  int rank = 0;
  std::vector<CandidateScore> table;
  ValidationSplit split;
};

struct SmoothSelection {
  double smooth_var = 0.0;
  std::vector<CandidateScore> table;
  ValidationSplit split;
};

/// Index of the row with the smallest mse. Rows within 1e-12 of the minimum count as tied; the
/// first tied row wins, or the last one when `prefer_last`.
std::size_t best_candidate(const std::vector<CandidateScore>& table, bool prefer_last = false);

/// Holds out 40% of the observed entries, fits one chain per candidate rank on the rest and
/// returns the rank whose posterior-mean imputation has the smallest validation MSE. Ties within
/// 1e-12 go to the smaller rank. The split is seeded from mcmc.seed; candidate c runs with
/// chain_seed(mcmc.seed, c + 1).
RankSelection cross_validate_rank(const ObservedFunctionalMatrix& data, std::vector<int> grid,
                                  const SplineDesign& design, const McmcConfig& mcmc,
                                  double validation_fraction = 0.4);

std::vector<double> default_smooth_candidates();

/// Same protocol as cross_validate_rank with sigma_B^2 held fixed at each candidate. Ties go to the
/// larger sigma_B^2.
SmoothSelection grid_select_smooth_var(const ObservedFunctionalMatrix& data, std::vector<double> candidates, int R,
                                       const SplineDesign& design, const McmcConfig& mcmc,
                                       double validation_fraction = 0.4);

}  // namespace bamifun
