#include "bamifun/harness.hpp"

#include "bamifun/errors.hpp"
#include "bamifun/parallel.hpp"
#include "bamifun/selection.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace bamifun {

void SimScenario::validate() const {
  if (N < 1 || J < 1 || K < 2) throw InvalidConfiguration("scenario needs N >= 1, J >= 1, K >= 2");
  if (!(missing_prop >= 0.0 && missing_prop < 1.0)) throw InvalidConfiguration("missing_prop must lie in [0, 1)");
  if (!(noise_var >= 0.0)) throw InvalidConfiguration("noise_var must be >= 0");
  if (min_obs < 1) throw InvalidConfiguration("min_obs must be >= 1");
  for (std::size_t h = 0; h < eigen_values.size(); ++h) {
    if (!(eigen_values[h] >= 0.0)) throw InvalidConfiguration("eigen_values must be nonnegative");
    if (h > 0 && eigen_values[h] > eigen_values[h - 1]) {
      throw InvalidConfiguration("eigen_values must be nonincreasing");
    }
  }
  if (!is_multiway() && J != 1) throw InvalidConfiguration("single-level scenarios use J = 1");
}

std::vector<double> single_level_eigenvalues() { return {2, 2, 2, 1, 1, 1, 0.5, 0.5, 0.5, 0.1, 0.1, 0.1}; }

std::vector<double> multiway_factor_variances() { return {2, 1, 0.5, 0.1}; }

double outcome_coefficient(double t) { return -10.0 * t * t + 10.0 * t + 0.34; }

Eigen::MatrixXd make_eigenfunctions(Eigen::Index K, Eigen::Index H, bool with_constant) {
  if (H < 1 || K < 1) throw InvalidConfiguration("make_eigenfunctions needs K >= 1 and H >= 1");
  if (H > K) throw InvalidConfiguration("make_eigenfunctions: H must not exceed K");
  const double kd = static_cast<double>(K);
  Eigen::MatrixXd U(K, H);
  const Eigen::Index shift = with_constant ? 1 : 0;
  if (with_constant) U.col(0).setOnes();
  for (Eigen::Index c = shift; c < H; ++c) {
    const Eigen::Index f = c - shift;
    const double freq = static_cast<double>(f / 2 + 1);
    for (Eigen::Index k = 0; k < K; ++k) {
      const double arg = 2.0 * M_PI * freq * static_cast<double>(k + 1) / kd;
      U(k, c) = std::sqrt(2.0) * (f % 2 == 0 ? std::sin(arg) : std::cos(arg));
    }
  }
  // Modified Gram-Schmidt, inner product (1/K) sum.
  for (Eigen::Index c = 0; c < H; ++c) {
    for (Eigen::Index p = 0; p < c; ++p) U.col(c) -= (U.col(p).dot(U.col(c)) / kd) * U.col(p);
    const double norm = std::sqrt(U.col(c).squaredNorm() / kd);
    if (!(norm > 1e-8)) {
      std::ostringstream os;
      os << "make_eigenfunctions: Fourier column " << c << " vanishes on a " << K << "-point grid";
      throw InvalidConfiguration(os.str());
    }
    U.col(c) /= norm;
  }
  return U;
}

SingleSample generate_single(const SimScenario& scenario, Rng& rng) {
  scenario.validate();
  if (scenario.is_multiway()) throw InvalidConfiguration("generate_single needs a single-level scenario");
  const Eigen::Index N = scenario.N, K = scenario.K;
  const auto H = static_cast<Eigen::Index>(scenario.eigen_values.size());

  SingleSample out;
  out.truth = Eigen::MatrixXd::Zero(N, K);
  if (H > 0) {
    const Eigen::MatrixXd U = make_eigenfunctions(K, H, scenario.constant_eigenfunction);
    Eigen::MatrixXd scores = rng.normal_matrix(N, H);
    for (Eigen::Index h = 0; h < H; ++h) scores.col(h) *= std::sqrt(scenario.eigen_values[static_cast<std::size_t>(h)]);
    out.truth = scores * U.transpose();
  }
  out.observed = out.truth + std::sqrt(scenario.noise_var) * rng.normal_matrix(N, K);

  if (scenario.kind == ScenarioKind::single_outcome) {
    const TimeGrid grid = TimeGrid::unit_fractions(static_cast<std::size_t>(K));
    out.beta.resize(K);
    for (Eigen::Index k = 0; k < K; ++k) out.beta(k) = outcome_coefficient(grid[static_cast<std::size_t>(k)]);
    Eigen::VectorXd y = out.observed * out.beta / static_cast<double>(K);
    for (Eigen::Index i = 0; i < N; ++i) y(i) += rng.normal();
    out.outcome = std::move(y);
  }
  return out;
}

MultiwaySample generate_multiway(const SimScenario& scenario, Rng& rng) {
  scenario.validate();
  if (!scenario.is_multiway()) throw InvalidConfiguration("generate_multiway needs a multiway scenario");
  const Eigen::Index N = scenario.N, J = scenario.J, K = scenario.K;
  const std::vector<double>& var = scenario.eigen_values;
  const auto R = static_cast<Eigen::Index>(var.size());
  auto sd = [&](Eigen::Index r) { return std::sqrt(var[static_cast<std::size_t>(r)]); };

  MultiwaySample out;
  if (scenario.kind == ScenarioKind::multiway_lowrank) {
    Eigen::MatrixXd U = R > 0 ? make_eigenfunctions(K, R, scenario.constant_eigenfunction) : Eigen::MatrixXd(K, 0);
    Eigen::MatrixXd A = rng.normal_matrix(N, R);
    Eigen::MatrixXd B = rng.normal_matrix(J, R);
    for (Eigen::Index r = 0; r < R; ++r) {
      A.col(r) *= sd(r);
      B.col(r) *= sd(r);
    }
    out.truth = R > 0 ? cp_reconstruct(A, B, U) : Tensor3(N, J, K);
    if (R == 0) out.truth.values().setZero();
  } else {
    if (R < 4) throw InvalidConfiguration("non-low-rank generator needs four factor variances");
    const Eigen::MatrixXd U = make_eigenfunctions(K, 8, scenario.constant_eigenfunction);
    Eigen::MatrixXd A = rng.normal_matrix(N, 2);
    for (Eigen::Index r = 0; r < 2; ++r) A.col(r) *= sd(r);
    const Eigen::MatrixXd subject_part = A * U.leftCols(2).transpose();  // N x K
    out.truth = Tensor3(N, J, K);
    for (Eigen::Index j = 0; j < J; ++j) {
      Eigen::MatrixXd Bj = rng.normal_matrix(N, 4);
      for (Eigen::Index r = 0; r < 4; ++r) Bj.col(r) *= sd(r);
      const Eigen::MatrixXd curves = subject_part + Bj * U.middleCols(4, 4).transpose();
      for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index i = 0; i < N; ++i) out.truth(i, j, k) = curves(i, k);
    }
  }
  out.observed = out.truth;
  out.observed.mode1() += std::sqrt(scenario.noise_var) * rng.normal_matrix(N, J * K);
  return out;
}

namespace {

Eigen::Index missing_count(Eigen::Index K, double s, int min_obs) {
  if (!(s >= 0.0 && s < 1.0)) throw InvalidConfiguration("missing proportion must lie in [0, 1)");
  if (min_obs < 1) throw InvalidConfiguration("min_obs must be >= 1");
  if (K < min_obs) {
    std::ostringstream os;
    os << "cannot keep " << min_obs << " observed points on a " << K << "-point grid";
    throw InvalidConfiguration(os.str());
  }
  auto n_miss = static_cast<Eigen::Index>(std::floor(s * static_cast<double>(K) + 1e-9));
  if (K - n_miss < min_obs) {
    n_miss = K - min_obs;
    std::ostringstream os;
    os << "missing proportion " << s << " leaves fewer than " << min_obs << " observed points; using "
       << static_cast<double>(n_miss) / static_cast<double>(K) << " instead";
    warn(os.str());
  }
  return n_miss;
}

// Marks `n_miss` uniformly chosen positions of one curve as missing via a partial Fisher-Yates pass.
template <typename Setter>
void mask_curve(Eigen::Index K, Eigen::Index n_miss, Rng& rng, std::vector<Eigen::Index>& scratch, Setter&& set) {
  std::iota(scratch.begin(), scratch.end(), Eigen::Index{0});
  for (Eigen::Index m = 0; m < n_miss; ++m) {
    std::uniform_int_distribution<Eigen::Index> pick(m, K - 1);
    std::swap(scratch[static_cast<std::size_t>(m)], scratch[static_cast<std::size_t>(pick(rng.engine()))]);
    set(scratch[static_cast<std::size_t>(m)]);
  }
}

}  // namespace

MaskMatrix apply_missingness(Eigen::Index rows, Eigen::Index K, double s, int min_obs, Rng& rng) {
  const Eigen::Index n_miss = missing_count(K, s, min_obs);
  MaskMatrix mask = MaskMatrix::Ones(rows, K);
  std::vector<Eigen::Index> scratch(static_cast<std::size_t>(K));
  for (Eigen::Index i = 0; i < rows; ++i) {
    mask_curve(K, n_miss, rng, scratch, [&](Eigen::Index k) { mask(i, k) = 0; });
  }
  return mask;
}

MaskMatrix apply_missingness(Eigen::Index N, Eigen::Index J, Eigen::Index K, double s, int min_obs, Rng& rng) {
  const Eigen::Index n_miss = missing_count(K, s, min_obs);
  MaskMatrix mask = MaskMatrix::Ones(N, J * K);
  std::vector<Eigen::Index> scratch(static_cast<std::size_t>(K));
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index j = 0; j < J; ++j) {
      mask_curve(K, n_miss, rng, scratch, [&](Eigen::Index k) { mask(i, j + J * k) = 0; });
    }
  }
  return mask;
}

namespace {

void check_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const MaskMatrix& mask, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || mask.rows() != a.rows() || mask.cols() != a.cols()) {
    throw InvalidInput(std::string(what) + ": shape mismatch");
  }
}

}  // namespace

double relative_mse(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& imputed, const MaskMatrix& mask) {
  check_same_shape(truth, imputed, mask, "relative_mse");
  double num = 0.0, den = 0.0;
  Eigen::Index n = 0;
  for (Eigen::Index c = 0; c < truth.cols(); ++c) {
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
      if (mask(i, c)) continue;
      const double d = truth(i, c) - imputed(i, c);
      num += d * d;
      den += truth(i, c) * truth(i, c);
      ++n;
    }
  }
  if (n == 0) throw UndefinedMetric("relative_mse: no masked entries");
  if (!(den > 0.0)) throw UndefinedMetric("relative_mse: masked truth is identically zero");
  return num / den;
}

double coverage_rate(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& lower, const Eigen::MatrixXd& upper,
                     const MaskMatrix& mask) {
  check_same_shape(truth, lower, mask, "coverage_rate");
  check_same_shape(truth, upper, mask, "coverage_rate");
  Eigen::Index hit = 0, n = 0;
  for (Eigen::Index c = 0; c < truth.cols(); ++c) {
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
      if (mask(i, c)) continue;
      hit += lower(i, c) <= truth(i, c) && truth(i, c) <= upper(i, c);
      ++n;
    }
  }
  if (n == 0) throw UndefinedMetric("coverage_rate: no masked entries");
  return static_cast<double>(hit) / static_cast<double>(n);
}

double relative_ise(const Eigen::VectorXd& beta_hat, const Eigen::VectorXd& beta_true) {
  if (beta_hat.size() != beta_true.size()) throw InvalidInput("relative_ise: length mismatch");
  const double den = beta_true.squaredNorm();
  if (!(den > 0.0)) throw UndefinedMetric("relative_ise: true coefficient is identically zero");
  return (beta_hat - beta_true).squaredNorm() / den;
}

Method parse_method(const std::string& name) {
  if (name == "bamifun") return Method::bamifun;
  if (name == "no-smooth-proxy") return Method::no_smooth_proxy;
  if (name == "single-impute-proxy") return Method::single_impute_proxy;
  throw InvalidConfiguration("unknown method '" + name + "'");
}

std::string to_string(Method method) {
  switch (method) {
    case Method::bamifun: return "bamifun";
    case Method::no_smooth_proxy: return "no-smooth-proxy";
    case Method::single_impute_proxy: return "single-impute-proxy";
  }
  return "?";
}

ScenarioKind parse_scenario_kind(const std::string& name) {
  if (name == "single") return ScenarioKind::single;
  if (name == "single+outcome" || name == "single-outcome") return ScenarioKind::single_outcome;
  if (name == "multiway-lowrank") return ScenarioKind::multiway_lowrank;
  if (name == "multiway-nonlowrank") return ScenarioKind::multiway_nonlowrank;
  throw InvalidConfiguration("unknown scenario kind '" + name + "'");
}

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::single: return "single";
    case ScenarioKind::single_outcome: return "single+outcome";
    case ScenarioKind::multiway_lowrank: return "multiway-lowrank";
    case ScenarioKind::multiway_nonlowrank: return "multiway-nonlowrank";
  }
  return "?";
}

unsigned ReplicationOptions::default_threads() { return default_thread_count(); }

namespace {

struct Imputation {
  Eigen::MatrixXd mean, lower, upper;
};

Imputation summarize_archive(const DrawArchive& archive, const MaskMatrix& mask, Method method, double level) {
  if (method == Method::single_impute_proxy) {
    const double z = boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 * (1.0 + level));
    Imputation out;
    out.mean = archive.posterior_mean();
    const double half = z * std::sqrt(archive.params.back().noise_var);
    out.lower = out.mean.array() - half;
    out.upper = out.mean.array() + half;
    return out;
  }
  EntryIntervals iv = entry_credible_intervals(archive, mask, level);
  return {std::move(iv.mean), std::move(iv.lower), std::move(iv.upper)};
}

McmcConfig chain_config(const ReplicationOptions& options, Method method, std::uint64_t seed) {
  McmcConfig cfg = options.mcmc;
  cfg.seed = seed;
  if (method == Method::no_smooth_proxy) cfg.fixed_smooth_var = options.proxy_smooth_var;
  return cfg;
}

void run_single_replicate(const SimScenario& scenario, Method method, const ReplicationOptions& options, Rng& rng,
                          MetricsReport& report) {
  const SingleSample sample = generate_single(scenario, rng);
  const MaskMatrix mask = apply_missingness(scenario.N, scenario.K, scenario.missing_prop, scenario.min_obs, rng);
  const TimeGrid grid = TimeGrid::unit_fractions(static_cast<std::size_t>(scenario.K));

  ObservedFunctionalMatrix data{sample.observed, mask, grid};
  for (Eigen::Index c = 0; c < mask.cols(); ++c)
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
      if (!mask(i, c)) data.values(i, c) = std::numeric_limits<double>::quiet_NaN();

  const SplineDesign design = method == Method::no_smooth_proxy
                                  ? make_identity_design(static_cast<std::size_t>(scenario.K))
                                  : make_spline_design(grid, options.basis_size, options.degree);
  const McmcConfig cfg = chain_config(options, method, rng.engine()());

  int R = 0;
  if (options.rank) {
    R = *options.rank;
  } else {
    if (options.rank_grid.empty()) throw InvalidConfiguration("replication needs a fixed rank or a rank grid");
    McmcConfig cv = McmcConfig::cross_validation();
    cv.seed = cfg.seed;
    cv.center = cfg.center;
    cv.fixed_smooth_var = cfg.fixed_smooth_var;
    R = cross_validate_rank(data, options.rank_grid, design, cv).rank;
  }
  report.rank = R;

  const DrawArchive archive = run_single_chain(data, R, design, cfg);
  const Imputation imp = summarize_archive(archive, mask, method, options.level);
  report.relative_mse = relative_mse(sample.observed, imp.mean, mask);
  report.coverage = coverage_rate(sample.observed, imp.lower, imp.upper, mask);

  if (sample.outcome) {
    const SplineDesign beta_design = make_spline_design(grid, options.beta_basis_size, options.degree);
    Eigen::VectorXd estimate, lower, upper;
    if (method == Method::single_impute_proxy) {
      const SofrFit fit = fit_sofr(imp.mean, *sample.outcome, beta_design, options.sofr);
      const double z = boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 * (1.0 + options.level));
      estimate = fit.coeff;
      lower = fit.coeff.array() - z * fit.pointwise_var.array().sqrt();
      upper = fit.coeff.array() + z * fit.pointwise_var.array().sqrt();
    } else {
      const PooledFunctional pooled = pooled_sofr(archive, *sample.outcome, beta_design, options.sofr, options.level);
      estimate = pooled.estimate;
      lower = pooled.lower;
      upper = pooled.upper;
    }
    report.relative_ise = relative_ise(estimate, sample.beta);
    const auto inside = (lower.array() <= sample.beta.array() && sample.beta.array() <= upper.array()).cast<double>();
    report.beta_coverage = inside.mean();
  }
}

void run_multiway_replicate(const SimScenario& scenario, Method method, const ReplicationOptions& options, Rng& rng,
                            MetricsReport& report) {
  const MultiwaySample sample = generate_multiway(scenario, rng);
  const MaskMatrix mask =
      apply_missingness(scenario.N, scenario.J, scenario.K, scenario.missing_prop, scenario.min_obs, rng);
  const TimeGrid grid = TimeGrid::unit_fractions(static_cast<std::size_t>(scenario.K));

  ObservedFunctionalTensor data{sample.observed, mask, grid};
  auto values = data.values.mode1();
  for (Eigen::Index c = 0; c < mask.cols(); ++c)
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
      if (!mask(i, c)) values(i, c) = std::numeric_limits<double>::quiet_NaN();

  const SplineDesign design = method == Method::no_smooth_proxy
                                  ? make_identity_design(static_cast<std::size_t>(scenario.K))
                                  : make_spline_design(grid, options.basis_size, options.degree);
  const McmcConfig cfg = chain_config(options, method, rng.engine()());
  if (!options.rank) throw InvalidConfiguration("multiway replication needs a fixed rank");
  report.rank = *options.rank;

  const DrawArchive archive = run_multiway_chain(data, *options.rank, design, cfg);
  const Imputation imp = summarize_archive(archive, mask, method, options.level);
  const Eigen::MatrixXd truth = sample.observed.mode1();
  report.relative_mse = relative_mse(truth, imp.mean, mask);
  report.coverage = coverage_rate(truth, imp.lower, imp.upper, mask);
}

}  // namespace

MetricsReport run_replicate(const SimScenario& scenario, Method method, const ReplicationOptions& options,
                            std::uint64_t seed, int index) {
  MetricsReport report;
  report.replicate = index;
  report.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  Rng rng(seed);
  if (scenario.is_multiway()) {
    run_multiway_replicate(scenario, method, options, rng, report);
  } else {
    run_single_replicate(scenario, method, options, rng, report);
  }
  report.runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary out;
  out.count = static_cast<int>(values.size());
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.se = std::sqrt(ss / (n - 1.0) / n);
  }
  return out;
}

StudyResult run_replication_study(const SimScenario& scenario, Method method, int reps,
                                  const ReplicationOptions& options, std::uint64_t base_seed) {
  if (reps < 1) throw InvalidConfiguration("reps must be >= 1");
  scenario.validate();
  StudyResult result;
  result.rows.resize(static_cast<std::size_t>(reps));
  parallel_for(
      result.rows.size(),
      [&](std::size_t r) {
        const std::uint64_t seed = replicate_seed(base_seed, r);
        try {
          WarningCapture quiet;
          result.rows[r] = run_replicate(scenario, method, options, seed, static_cast<int>(r));
        } catch (const std::exception& e) {
          MetricsReport failed;
          failed.replicate = static_cast<int>(r);
          failed.seed = seed;
          failed.error = std::string("replicate ") + std::to_string(r) + ": " + e.what();
          result.rows[r] = std::move(failed);
        }
      },
      options.threads);

  std::vector<double> mse, cov, ise, bcov;
  for (const auto& row : result.rows) {
    if (!row.ok()) {
      ++result.failures;
      continue;
    }
    mse.push_back(row.relative_mse);
    cov.push_back(row.coverage);
    if (row.relative_ise) ise.push_back(*row.relative_ise);
    if (row.beta_coverage) bcov.push_back(*row.beta_coverage);
  }
  result.relative_mse = summarize(mse);
  result.coverage = summarize(cov);
  result.relative_ise = summarize(ise);
  result.beta_coverage = summarize(bcov);
  return result;
}

}  // namespace bamifun
