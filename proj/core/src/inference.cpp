#include "bamifun/inference.hpp"

#include "bamifun/errors.hpp"
#include "bamifun/parallel.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace bamifun {
namespace {

void check_level(double level) {
  if (!(level > 0.0 && level < 1.0)) {
    std::ostringstream os;
    os << "level must lie in (0, 1), got " << level;
    throw InvalidConfiguration(os.str());
  }
}

double normal_quantile(double p) { return boost::math::quantile(boost::math::normal_distribution<double>(), p); }

double t_quantile(double p, double dof) {
  if (!std::isfinite(dof)) return normal_quantile(p);
  return boost::math::quantile(boost::math::students_t_distribution<double>(dof), p);
}

}  // namespace

double empirical_quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw InvalidInput("empirical_quantile: no values");
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidConfiguration("empirical_quantile: p must lie in [0, 1]");
  const std::size_t n = sorted.size();
  const double h = p * static_cast<double>(n + 1);  // 1-based position
  if (h <= 1.0) return sorted.front();
  if (h >= static_cast<double>(n)) return sorted.back();
  const auto lo = static_cast<std::size_t>(std::floor(h));
  return sorted[lo - 1] + (h - static_cast<double>(lo)) * (sorted[lo] - sorted[lo - 1]);
}

EntryIntervals entry_credible_intervals(const DrawArchive& archive, const MaskMatrix& mask, double level) {
  check_level(level);
  const std::size_t S = archive.size();
  if (S == 0) throw InvalidInput("archive holds no draws");
  const Eigen::MatrixXd& first = archive.datasets.front();
  if (mask.rows() != first.rows() || mask.cols() != first.cols()) {
    throw InvalidInput("mask shape does not match the archive datasets");
  }
  if (S < 40) warn("only " + std::to_string(S) + " retained draws; interval endpoints will be noisy");

  EntryIntervals out;
  out.level = level;
  out.mean = archive.posterior_mean();
  out.lower = out.mean;
  out.upper = out.mean;
  const double p_lo = 0.5 * (1.0 - level);
  const double p_hi = 0.5 * (1.0 + level);
  std::vector<double> column(S);
  for (Eigen::Index c = 0; c < first.cols(); ++c) {
    for (Eigen::Index i = 0; i < first.rows(); ++i) {
      if (mask(i, c)) continue;
      for (std::size_t s = 0; s < S; ++s) column[s] = archive.datasets[s](i, c);
      std::sort(column.begin(), column.end());
      out.lower(i, c) = empirical_quantile(column, p_lo);
      out.upper(i, c) = empirical_quantile(column, p_hi);
    }
  }
  return out;
}

PooledFunctional pool_rubin(const Eigen::MatrixXd& estimates, const Eigen::MatrixXd& variances, double level,
                            DofRule rule) {
  check_level(level);
  const Eigen::Index S = estimates.rows();
  const Eigen::Index G = estimates.cols();
  if (variances.rows() != S || variances.cols() != G) throw InvalidInput("pool_rubin: estimate/variance shape mismatch");
  if (S < 2) throw PoolingImpossible("Rubin's rules need at least two imputations");
  if ((variances.array() < 0.0).any() || !variances.allFinite() || !estimates.allFinite()) {
    throw InvalidInput("pool_rubin: variances must be finite and nonnegative");
  }

  const double s = static_cast<double>(S);
  const double inflate = 1.0 + 1.0 / s;
  const double alpha_hi = 0.5 * (1.0 + level);

  PooledFunctional out;
  out.imputations = static_cast<int>(S);
  out.level = level;
  out.estimate.resize(G);
  out.within_var.resize(G);
  out.between_var.resize(G);
  out.total_var.resize(G);
  out.dof.resize(G);
  out.lower.resize(G);
  out.upper.resize(G);
  for (Eigen::Index g = 0; g < G; ++g) {
    const auto e = estimates.col(g).array();
    const auto v = variances.col(g).array();
    const double mean = e(0) + (e - e(0)).sum() / s;
    const double vw = v(0) + (v - v(0)).sum() / s;
    const double vb = (e - mean).square().sum() / (s - 1.0);
    const double vt = vw + inflate * vb;
    double nu = std::numeric_limits<double>::infinity();
    if (vb > 0.0) {
      const double ratio = 1.0 + vw / (inflate * vb);
      nu = (s - 1.0) * (rule == DofRule::squared ? ratio * ratio : ratio);
    }
    const double half = t_quantile(alpha_hi, nu) * std::sqrt(vt);
    out.estimate(g) = mean;
    out.within_var(g) = vw;
    out.between_var(g) = vb;
    out.total_var(g) = vt;
    out.dof(g) = nu;
    out.lower(g) = mean - half;
    out.upper(g) = mean + half;
  }
  return out;
}

namespace {

struct PenalizedSystem {
  Eigen::LDLT<Eigen::MatrixXd> ldlt;
  Eigen::VectorXd b;
  double rss = 0.0;
  double edf = 0.0;
};

PenalizedSystem solve_penalized(const Eigen::MatrixXd& ctc, const Eigen::VectorXd& cty, const Eigen::MatrixXd& Cc,
                                const Eigen::VectorXd& yc, const Eigen::MatrixXd& P, double lambda) {
  Eigen::MatrixXd A = ctc + lambda * P;
  PenalizedSystem sys;
  sys.ldlt.compute(A);
  const auto usable = [&] {
    return sys.ldlt.info() == Eigen::Success && sys.ldlt.isPositive() && sys.ldlt.vectorD().minCoeff() > 0.0;
  };
  if (!usable()) {
    A.diagonal().array() += 1e-10 * std::max(A.trace() / static_cast<double>(A.rows()), 1e-300);
    sys.ldlt.compute(A);
    if (!usable()) throw NumericalFailure("fit_sofr: penalized normal equations are singular after jitter");
  }
  sys.b = sys.ldlt.solve(cty);
  sys.rss = (yc - Cc * sys.b).squaredNorm();
  sys.edf = sys.ldlt.solve(ctc).trace();
  return sys;
}

}  // namespace

SofrFit fit_sofr(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const SplineDesign& design_beta,
                 const SofrOptions& options) {
  const Eigen::Index N = X.rows();
  const Eigen::Index K = X.cols();
  if (y.size() != N) throw InvalidInput("fit_sofr: outcome length differs from the number of subjects");
  if (design_beta.grid_size() != K) throw InvalidInput("fit_sofr: design grid differs from the data grid");
  if (!X.allFinite() || !y.allFinite()) throw InvalidInput("fit_sofr: data must be complete and finite");
  if (options.smooth && !(*options.smooth >= 0.0)) throw InvalidConfiguration("fit_sofr: smoothing must be >= 0");

  const Eigen::MatrixXd& theta = design_beta.theta;
  const Eigen::MatrixXd& P = design_beta.penalty;
  const Eigen::MatrixXd C = X * theta.transpose() / static_cast<double>(K);
  const Eigen::RowVectorXd c_mean = C.colwise().mean();
  const double y_mean = y.mean();
  const Eigen::MatrixXd Cc = C.rowwise() - c_mean;
  const Eigen::VectorXd yc = y.array() - y_mean;
  const Eigen::MatrixXd ctc = Cc.transpose() * Cc;
  const Eigen::VectorXd cty = Cc.transpose() * yc;

  double lambda = 0.0;
  if (options.smooth) {
    lambda = *options.smooth;
  } else {
    const double tr_p = P.trace();
    if (tr_p > 0.0) {
      // Log grid spanning 1e-8 .. 1e2 relative to the data/penalty scale ratio.
      const double scale = ctc.trace() / tr_p;
      const int n = std::max(2, options.gcv_points);
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < n; ++j) {
        const double cand = scale * std::pow(10.0, -8.0 + 10.0 * j / (n - 1));
        const PenalizedSystem sys = solve_penalized(ctc, cty, Cc, yc, P, cand);
        const double denom = static_cast<double>(N) - sys.edf - 1.0;
        if (!(denom > 0.0)) continue;
        const double gcv = static_cast<double>(N) * sys.rss / (denom * denom);
        if (gcv < best) {
          best = gcv;
          lambda = cand;
        }
      }
    }
  }

  const PenalizedSystem sys = solve_penalized(ctc, cty, Cc, yc, P, lambda);
  SofrFit fit;
  fit.smooth_param = lambda;
  fit.basis_coeffs = sys.b;
  fit.coeff = theta.transpose() * sys.b;
  fit.intercept = y_mean - c_mean.dot(sys.b);
  fit.edf = sys.edf;
  const double dof = static_cast<double>(N) - sys.edf - 1.0;
  fit.residual_var = dof > 0.0 ? sys.rss / dof : 0.0;

  const Eigen::MatrixXd a_inv_theta = sys.ldlt.solve(theta);  // L x K
  fit.pointwise_var.resize(K);
  if (options.variance == SofrVariance::sandwich) {
    const Eigen::MatrixXd mid = ctc * a_inv_theta;
    fit.pointwise_var = (a_inv_theta.array() * mid.array()).colwise().sum().transpose();
  } else {
    fit.pointwise_var = (theta.array() * a_inv_theta.array()).colwise().sum().transpose();
  }
  fit.pointwise_var = (fit.residual_var * fit.pointwise_var).cwiseMax(0.0);
  return fit;
}

PooledFunctional pooled_sofr(const DrawArchive& archive, const Eigen::VectorXd& y, const SplineDesign& design_beta,
                             const SofrOptions& options, double level, DofRule rule) {
  if (archive.features != 1) throw InvalidInput("pooled_sofr expects a single-level archive");
  const std::size_t S = archive.size();
  if (S < 2) throw PoolingImpossible("Rubin's rules need at least two imputations");
  const Eigen::Index K = archive.grid_size;
  Eigen::MatrixXd estimates(static_cast<Eigen::Index>(S), K);
  Eigen::MatrixXd variances(static_cast<Eigen::Index>(S), K);
  parallel_for(S, [&](std::size_t s) {
    const SofrFit fit = fit_sofr(archive.datasets[s], y, design_beta, options);
    estimates.row(static_cast<Eigen::Index>(s)) = fit.coeff.transpose();
    variances.row(static_cast<Eigen::Index>(s)) = fit.pointwise_var.transpose();
  });
  return pool_rubin(estimates, variances, level, rule);
}

}  // namespace bamifun
