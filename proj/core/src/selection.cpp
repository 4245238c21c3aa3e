#include "bamifun/selection.hpp"

#include "bamifun/errors.hpp"
#include "bamifun/parallel.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace bamifun {

InitialFactors init_single(const ObservedFunctionalMatrix& data, int R, const SplineDesign& design) {
  const Eigen::Index N = data.subjects();
  const Eigen::Index K = data.grid_size();
  if (R < 1 || R > std::min(N, K)) {
    std::ostringstream os;
    os << "init_single: R = " << R << " must lie in [1, min(N, K) = " << std::min(N, K) << "]";
    throw InvalidConfiguration(os.str());
  }
  const Eigen::RowVectorXd means = observed_column_means(data.values, data.mask);
  const Eigen::MatrixXd filled = fill_missing(data.values, data.mask, means.replicate(N, 1));

  Eigen::BDCSVD<Eigen::MatrixXd> svd(filled, Eigen::ComputeThinV);
  const Eigen::MatrixXd raw = svd.matrixV().leftCols(R);

  const double tr_p = design.penalty.size() > 0 ? design.penalty.trace() : 0.0;
  const double weight = tr_p > 0.0 ? 1e-4 * (design.theta * design.theta.transpose()).trace() / tr_p : 0.0;
  const Eigen::MatrixXd coeffs = project_to_basis(raw, design, weight);  // R x L
  Eigen::MatrixXd U = (coeffs * design.theta).transpose();
  for (Eigen::Index r = 0; r < R; ++r) {
    const double n = U.col(r).norm();
    if (n > 0.0) {
      U.col(r) /= n;
    } else {
      U.col(r) = raw.col(r);  // direction lost in the projection; keep the raw singular vector
    }
  }
  return InitialFactors{U, filled * U};
}

std::vector<int> default_rank_grid(int R_init) {
  if (R_init < 2) {
    warn("R_init < 2; rank grid reduced to {1}");
    return {1};
  }
  std::vector<int> grid;
  for (int d = 3; d >= 1; --d) grid.push_back(std::max(1, R_init - d));
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

int estimate_rank_pve(const ObservedFunctionalMatrix& data, double pve) {
  if (!(pve > 0.0 && pve <= 1.0)) throw InvalidConfiguration("pve must lie in (0, 1]");
  const Eigen::RowVectorXd means = observed_column_means(data.values, data.mask);
  Eigen::MatrixXd filled = fill_missing(data.values, data.mask, means.replicate(data.subjects(), 1));
  filled.rowwise() -= means;
  const Eigen::VectorXd sv = Eigen::BDCSVD<Eigen::MatrixXd>(filled).singularValues();
  const double total = sv.squaredNorm();
  if (!(total > 0.0)) return 1;
  double acc = 0.0;
  for (Eigen::Index r = 0; r < sv.size(); ++r) {
    acc += sv(r) * sv(r);
    if (acc >= pve * total) return static_cast<int>(r + 1);
  }
  return static_cast<int>(sv.size());
}

ValidationSplit draw_validation_split(const MaskMatrix& mask, double fraction, Rng& rng, int max_attempts) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidConfiguration("validation fraction must lie in (0, 1)");
  std::vector<Eigen::Index> observed;
  for (Eigen::Index k = 0; k < mask.cols(); ++k)
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
      if (mask(i, k)) observed.push_back(i + mask.rows() * k);
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(observed.size())));

  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<Eigen::Index> order = observed;
    std::shuffle(order.begin(), order.end(), rng.engine());
    ValidationSplit split{mask, MaskMatrix::Zero(mask.rows(), mask.cols())};
    for (std::size_t v = 0; v < n_val; ++v) {
      const Eigen::Index i = order[v] % mask.rows();
      const Eigen::Index k = order[v] / mask.rows();
      split.training(i, k) = 0;
      split.validation(i, k) = 1;
    }
    bool ok = true;
    for (Eigen::Index i = 0; i < mask.rows() && ok; ++i) ok = split.training.row(i).cast<int>().sum() > 0;
    if (ok) return split;
  }
  std::ostringstream os;
  os << "could not draw a validation split leaving every row a training observation in " << max_attempts
     << " attempts";
  throw SplitFailure(os.str());
}

double validation_mse(const Eigen::MatrixXd& values, const Eigen::MatrixXd& imputed, const MaskMatrix& validation) {
  double sse = 0.0;
  Eigen::Index n = 0;
  for (Eigen::Index k = 0; k < values.cols(); ++k) {
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      if (validation(i, k)) {
        const double d = values(i, k) - imputed(i, k);
        sse += d * d;
        ++n;
      }
    }
  }
  if (n == 0) throw UndefinedMetric("validation set is empty");
  return sse / static_cast<double>(n);
}

namespace {

// Fits one chain per candidate on the training portion and scores each on the validation set.
template <typename Configure>
std::vector<CandidateScore> score_candidates(const ObservedFunctionalMatrix& data, const ValidationSplit& split,
                                             const std::vector<double>& candidates, Configure&& configure) {
  ObservedFunctionalMatrix training = data;
  training.mask = split.training;
  std::vector<CandidateScore> table(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t c) {
    const DrawArchive archive = configure(training, c);
    table[c].candidate = candidates[c];
    table[c].posterior_mean = archive.posterior_mean();
    table[c].mse = validation_mse(data.values, table[c].posterior_mean, split.validation);
  });
  return table;
}

}  // namespace

std::size_t best_candidate(const std::vector<CandidateScore>& table, bool prefer_last) {
  if (table.empty()) throw InvalidConfiguration("no candidates to compare");
  double best = table.front().mse;
  for (const auto& row : table) best = std::min(best, row.mse);
  std::size_t pick = table.size();
  for (std::size_t c = 0; c < table.size(); ++c) {
    if (table[c].mse <= best + 1e-12) {
      pick = c;
      if (!prefer_last) break;
    }
  }
  return pick;
}

RankSelection cross_validate_rank(const ObservedFunctionalMatrix& data, std::vector<int> grid,
                                  const SplineDesign& design, const McmcConfig& mcmc, double validation_fraction) {
  if (grid.empty()) throw InvalidConfiguration("rank grid is empty");
  for (int r : grid) {
    if (r < 1) throw InvalidConfiguration("rank candidates must be >= 1");
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  data.validate();
  Rng rng(mcmc.seed);
  RankSelection result;
  result.split = draw_validation_split(data.mask, validation_fraction, rng);
  if (grid.size() == 1) {
    // Nothing to compare; the singleton is returned without fitting.
    result.rank = grid.front();
    return result;
  }

  std::vector<double> candidates(grid.begin(), grid.end());
  result.table = score_candidates(data, result.split, candidates, [&](const ObservedFunctionalMatrix& train, std::size_t c) {
    McmcConfig cfg = mcmc;
    cfg.seed = chain_seed(mcmc.seed, c + 1);
    return run_single_chain(train, grid[c], design, cfg);
  });

  result.rank = static_cast<int>(result.table[best_candidate(result.table)].candidate);
  return result;
}

std::vector<double> default_smooth_candidates() { return {0.001, 0.01, 0.05, 0.1, 1.0}; }

SmoothSelection grid_select_smooth_var(const ObservedFunctionalMatrix& data, std::vector<double> candidates, int R,
                                       const SplineDesign& design, const McmcConfig& mcmc,
                                       double validation_fraction) {
  if (candidates.empty()) throw InvalidConfiguration("smoothing candidate list is empty");
  for (double c : candidates) {
    if (!(c > 0.0)) throw InvalidConfiguration("smoothing candidates must be positive");
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  data.validate();
  Rng rng(mcmc.seed);
  SmoothSelection result;
  result.split = draw_validation_split(data.mask, validation_fraction, rng);
  if (candidates.size() == 1) {
    result.smooth_var = candidates.front();
    return result;
  }

  result.table = score_candidates(data, result.split, candidates, [&](const ObservedFunctionalMatrix& train, std::size_t c) {
    McmcConfig cfg = mcmc;
    cfg.seed = chain_seed(mcmc.seed, c + 1);
    cfg.fixed_smooth_var = candidates[c];
    return run_single_chain(train, R, design, cfg);
  });

  // Ascending order, so the last tied candidate is the largest.
  result.smooth_var = result.table[best_candidate(result.table, true)].candidate;
  return result;
}

}  // namespace bamifun
