#pragma once

#include "bamifun/inference.hpp"
#include "bamifun/multiway_gibbs.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bamifun {

enum class ScenarioKind { single, single_outcome, multiway_lowrank, multiway_nonlowrank };

struct SimScenario {
  ScenarioKind kind = ScenarioKind::single;
  Eigen::Index N = 100;
  Eigen::Index J = 1;
  Eigen::Index K = 100;
  double missing_prop = 0.8;
  std::vector<double> eigen_values;  ///< score variances (single) or factor variances (multiway)
  double noise_var = 1.0;
  std::uint64_t seed = 1;
  int min_obs = 2;
  /// Lead the eigenfunction system with the constant function (see make_eigenfunctions).
  bool constant_eigenfunction = false;

  bool is_multiway() const {
    return kind == ScenarioKind::multiway_lowrank || kind == ScenarioKind::multiway_nonlowrank;
  }
  void validate() const;
};

/// [2,2,2,1,1,1,0.5,0.5,0.5,0.1,0.1,0.1]
std::vector<double> single_level_eigenvalues();
/// {2, 1, 0.5, 0.1}
std::vector<double> multiway_factor_variances();
/// beta(t) = -10 t^2 + 10 t + 0.34
double outcome_coefficient(double t);

/// K x H Fourier system on t_k = k / K: columns sqrt2 sin(2 pi t), sqrt2 cos(2 pi t),
/// sqrt2 sin(4 pi t), ... orthonormalized by modified Gram-Schmidt in the discrete inner product
/// <f, g> = (1/K) sum_k f(t_k) g(t_k), so (1/K) U^T U = I_H. With `with_constant` the first column
/// is the constant 1 and the Fourier pairs follow.
Eigen::MatrixXd make_eigenfunctions(Eigen::Index K, Eigen::Index H, bool with_constant = false);

struct SingleSample {
  Eigen::MatrixXd truth;     ///< noiseless signal, N x K
  Eigen::MatrixXd observed;  ///< truth + noise, fully populated
  std::optional<Eigen::VectorXd> outcome;
  Eigen::VectorXd beta;      ///< outcome coefficient on the grid (outcome scenarios only)
};

/// Scores N(0, eigen_values[h]) times make_eigenfunctions, plus N(0, noise_var) noise. Outcome
/// scenarios add y_i = (1/K) sum_k beta(t_k) X_ik + N(0, 1) on the noisy curves.
SingleSample generate_single(const SimScenario& scenario, Rng& rng);

struct MultiwaySample {
  Tensor3 truth;
  Tensor3 observed;
};

/// Low-rank: sum_{r<=4} a_r o b_r o u_r, a_ir, b_jr ~ N(0, var_r). Non-low-rank:
/// X_ij(t) = sum_{r<=2} a_ir u_r(t) + sum_{r<=4} b_ijr u_{r+4}(t), a_ir, b_ijr ~ N(0, var_r).
/// Unit-variance noise on top (scenario.noise_var).
MultiwaySample generate_multiway(const SimScenario& scenario, Rng& rng);

/// Per row, floor(s K) uniformly chosen cells are masked. When that leaves fewer than min_obs
/// observed cells the count is reduced to K - min_obs with a warning.
MaskMatrix apply_missingness(Eigen::Index rows, Eigen::Index K, double s, int min_obs, Rng& rng);

/// Same rule applied to every subject-feature curve; result is in the N x (J K) mode-1 layout.
MaskMatrix apply_missingness(Eigen::Index N, Eigen::Index J, Eigen::Index K, double s, int min_obs, Rng& rng);

/// sum_{mask=0} (X - Xhat)^2 / sum_{mask=0} X^2.
double relative_mse(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& imputed, const MaskMatrix& mask);

/// Share of mask = 0 cells with lower <= truth <= upper.
double coverage_rate(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& lower, const Eigen::MatrixXd& upper,
                     const MaskMatrix& mask);

/// Rectangle-rule ratio sum (bhat - b)^2 / sum b^2.
double relative_ise(const Eigen::VectorXd& beta_hat, const Eigen::VectorXd& beta_true);

enum class Method { bamifun, no_smooth_proxy, single_impute_proxy };

Method parse_method(const std::string& name);
std::string to_string(Method method);
ScenarioKind parse_scenario_kind(const std::string& name);
std::string to_string(ScenarioKind kind);

struct ReplicationOptions {
  /// Fixed rank; when empty the rank is chosen by cross_validate_rank over `rank_grid`.
  std::optional<int> rank;
  std::vector<int> rank_grid;
  int basis_size = 15;
  int degree = 3;
  int beta_basis_size = 15;
  McmcConfig mcmc;
  SofrOptions sofr;
  double level = 0.95;
  /// sigma_B^2 used by the no-smooth proxy, whose penalty is zero.
  double proxy_smooth_var = 1.0;
  unsigned threads = default_threads();

  static unsigned default_threads();
};

struct MetricsReport {
  int replicate = 0;
  std::uint64_t seed = 0;
  int rank = 0;
  double relative_mse = 0.0;
  double coverage = 0.0;
  std::optional<double> relative_ise;
  std::optional<double> beta_coverage;
  double runtime = 0.0;  ///< seconds
  std::string error;     ///< non-empty when the replicate failed

  bool ok() const { return error.empty(); }
};

struct MetricSummary {
  double mean = 0.0;
  double se = 0.0;
  int count = 0;
};

struct StudyResult {
  std::vector<MetricsReport> rows;
  MetricSummary relative_mse;
  MetricSummary coverage;
  MetricSummary relative_ise;
  MetricSummary beta_coverage;
  int failures = 0;
};

/// One replicate with the given seed: generate, mask, impute with `method`, score.
MetricsReport run_replicate(const SimScenario& scenario, Method method, const ReplicationOptions& options,
                            std::uint64_t seed, int index = 0);

/// Replicate r uses replicate_seed(base_seed, r); replicates run concurrently and a failed
/// replicate is recorded in its row.
StudyResult run_replication_study(const SimScenario& scenario, Method method, int reps,
                                  const ReplicationOptions& options, std::uint64_t base_seed);

MetricSummary summarize(const std::vector<double>& values);

}  // namespace bamifun
