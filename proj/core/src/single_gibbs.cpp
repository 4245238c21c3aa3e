#include "bamifun/single_gibbs.hpp"

#include "bamifun/errors.hpp"
#include "bamifun/selection.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>
#include <sstream>
#include <string>

namespace bamifun {
namespace {

constexpr double kMinVariance = 1e-12;
constexpr double kMaxCondition = 1e12;
constexpr Eigen::Index kDenseRouteLimit = 240;

double clamp_variance(double v) { return v < kMinVariance ? kMinVariance : v; }

std::string at_iteration(int it, const std::exception& e) {
  std::ostringstream os;
  os << "iteration " << it << ": " << e.what();
  return os.str();
}

}  // namespace

void ObservedFunctionalMatrix::validate() const {
  if (values.rows() != mask.rows() || values.cols() != mask.cols()) {
    throw InvalidInput("values and mask have different shapes");
  }
  if (static_cast<std::size_t>(values.cols()) != grid.size()) {
    throw InvalidInput("number of columns does not match the time grid");
  }
  int sparse_rows = 0;
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    int observed = 0;
    for (Eigen::Index k = 0; k < mask.cols(); ++k) {
      if (!mask(i, k)) continue;
      if (!std::isfinite(values(i, k))) throw InvalidInput("observed values must be finite");
      ++observed;
    }
    if (observed == 0) {
      std::ostringstream os;
      os << "subject " << i << " has no observed values";
      throw InvalidInput(os.str());
    }
    if (observed < 2) ++sparse_rows;
  }
  if (sparse_rows > 0) warn(std::to_string(sparse_rows) + " subject(s) have a single observed value");
}

McmcConfig McmcConfig::cross_validation() {
  McmcConfig c;
  c.burn_in = 200;
  c.draws = 50;
  return c;
}

void McmcConfig::validate() const {
  if (burn_in < 0) throw InvalidConfiguration("burn-in must be >= 0");
  if (draws < 1) throw InvalidConfiguration("number of retained draws must be >= 1");
  if (thinning < 1) throw InvalidConfiguration("thinning must be >= 1");
  if (fixed_smooth_var && !(*fixed_smooth_var > 0.0)) {
    throw InvalidConfiguration("fixed smoothing variance must be positive");
  }
}

Eigen::MatrixXd DrawArchive::posterior_mean() const {
  if (datasets.empty()) throw InvalidInput("archive holds no draws");
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(datasets.front().rows(), datasets.front().cols());
  // Offsets from the first draw keep identical draws exactly identical after averaging.
  for (const auto& d : datasets) mean += d - datasets.front();
  mean /= static_cast<double>(datasets.size());
  mean += datasets.front();
  return mean;
}

Eigen::MatrixXd draw_regression_rows(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& G, double noise_var,
                                     Rng& rng, double prior_precision, const char* what) {
  if (Y.cols() != G.rows()) throw InvalidInput(std::string(what) + ": dimension mismatch");
  const double s2 = clamp_variance(noise_var);
  const Eigen::Index R = G.cols();
  const Eigen::MatrixXd gtg = G.transpose() * G;

  if (prior_precision <= 0.0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gtg, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > kMaxCondition) {
      std::ostringstream os;
      os << what << ": design cross-product is singular (condition number "
         << (lo > 0.0 ? hi / lo : INFINITY) << ")";
      throw SingularDesign(os.str());
    }
  }

  // Posterior precision of each row: G^T G / s2 + prior_precision I.
  Eigen::MatrixXd precision = gtg / s2;
  precision.diagonal().array() += prior_precision;
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) throw SingularDesign(std::string(what) + ": precision is not positive definite");

  const Eigen::MatrixXd rhs = (Y * G).transpose() / s2;  // R x n
  Eigen::MatrixXd draws = llt.solve(rhs);
  const Eigen::MatrixXd z = rng.normal_matrix(R, Y.rows());
  draws += llt.matrixU().solve(z);
  return draws.transpose();
}

Eigen::MatrixXd draw_scores(const Eigen::MatrixXd& completed, const Eigen::MatrixXd& U, double noise_var,
                            Rng& rng, double prior_precision) {
  return draw_regression_rows(completed, U, noise_var, rng, prior_precision, "draw_scores");
}

CoefficientPosterior::CoefficientPosterior(const SplineDesign& design, Eigen::Index rank, double ridge, Route route)
    : rank_(rank), basis_gram_(design.theta * design.theta.transpose()) {
  const Eigen::Index L = design.basis_size();
  penalty_ = design.penalty.size() == 0 ? Eigen::MatrixXd::Zero(L, L) : design.penalty;
  if (ridge > 0.0) penalty_.diagonal().array() += ridge;

  bool want_block = route == Route::block || (route == Route::automatic && rank * L > kDenseRouteLimit);
  if (want_block) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> g(basis_gram_, Eigen::EigenvaluesOnly);
    const double lo = g.eigenvalues().minCoeff();
    const double hi = g.eigenvalues().maxCoeff();
    if (lo > 0.0 && hi / lo < kMaxCondition) {
      Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(penalty_, basis_gram_);
      if (ges.info() == Eigen::Success) {
        eigvecs_ = ges.eigenvectors();
        eigvals_ = ges.eigenvalues().cwiseMax(0.0);
        block_ = true;
      }
    }
    if (!block_ && route == Route::block) {
      throw NumericalFailure("block coefficient route needs a well-conditioned theta theta^T");
    }
  }
}

Eigen::MatrixXd CoefficientPosterior::solve(const Eigen::MatrixXd& cross, const Eigen::MatrixXd& gram,
                                            double noise_var, double smooth_var, const Eigen::MatrixXd* noise) const {
  const Eigen::Index R = rank_;
  const Eigen::Index L = basis_gram_.rows();
  if (cross.rows() != R || cross.cols() != L || gram.rows() != R || gram.cols() != R) {
    throw InvalidInput("draw_coeffs: sufficient statistics have the wrong shape");
  }
  const double inv_s2 = 1.0 / clamp_variance(noise_var);
  const double inv_sb = 1.0 / clamp_variance(smooth_var);

  if (block_) {
    // B = Z Q^T; column l of Z has precision gram / s2 + d_l / sb I and linear term (cross Q / s2)_l.
    const Eigen::MatrixXd lin = inv_s2 * cross * eigvecs_;
    Eigen::MatrixXd Z(R, L);
    for (Eigen::Index l = 0; l < L; ++l) {
      Eigen::MatrixXd m = inv_s2 * gram;
      m.diagonal().array() += inv_sb * eigvals_(l);
      Eigen::LLT<Eigen::MatrixXd> llt(m);
      if (llt.info() != Eigen::Success) {
        m.diagonal().array() += 1e-10 * m.trace() / static_cast<double>(R);
        llt.compute(m);
        if (llt.info() != Eigen::Success) {
          throw NumericalFailure("draw_coeffs: coefficient precision is not positive definite after jitter");
        }
      }
      Z.col(l) = llt.solve(lin.col(l));
      if (noise != nullptr) Z.col(l) += llt.matrixU().solve(noise->col(l));
    }
    return Z * eigvecs_.transpose();
  }

  // Dense route on Vec(B), index r + R l.
  const Eigen::Index n = R * L;
  Eigen::MatrixXd precision(n, n);
  for (Eigen::Index b = 0; b < L; ++b) {
    for (Eigen::Index a = 0; a < L; ++a) {
      auto block = precision.block(a * R, b * R, R, R);
      block = (inv_s2 * basis_gram_(a, b)) * gram;
      block.diagonal().array() += inv_sb * penalty_(a, b);
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) {
    precision.diagonal().array() += 1e-10 * precision.trace() / static_cast<double>(n);
    llt.compute(precision);
    if (llt.info() != Eigen::Success) {
      throw NumericalFailure("draw_coeffs: coefficient precision is not positive definite after jitter");
    }
  }
  const Eigen::VectorXd lin = inv_s2 * vec(cross);
  Eigen::VectorXd b = llt.solve(lin);
  if (noise != nullptr) b += llt.matrixU().solve(vec(*noise));
  return unvec(b, R, L);
}

Eigen::MatrixXd CoefficientPosterior::draw(const Eigen::MatrixXd& cross, const Eigen::MatrixXd& gram,
                                           double noise_var, double smooth_var, Rng& rng) const {
  const Eigen::MatrixXd z = rng.normal_matrix(rank_, basis_gram_.rows());
  return solve(cross, gram, noise_var, smooth_var, &z);
}

Eigen::MatrixXd CoefficientPosterior::mean(const Eigen::MatrixXd& cross, const Eigen::MatrixXd& gram,
                                           double noise_var, double smooth_var) const {
  return solve(cross, gram, noise_var, smooth_var, nullptr);
}

Eigen::MatrixXd draw_coeffs(const Eigen::MatrixXd& completed, const Eigen::MatrixXd& V, double noise_var,
                            double smooth_var, const SplineDesign& design, Rng& rng, double ridge) {
  const CoefficientPosterior posterior(design, V.cols(), ridge);
  const Eigen::MatrixXd cross = V.transpose() * completed * design.theta.transpose();
  return posterior.draw(cross, V.transpose() * V, noise_var, smooth_var, rng);
}

double draw_noise_var(const Eigen::MatrixXd& completed, const Eigen::MatrixXd& fitted, Rng& rng,
                      const PriorConfig& prior) {
  if (completed.rows() != fitted.rows() || completed.cols() != fitted.cols()) {
    throw InvalidInput("draw_noise_var: shape mismatch");
  }
  const double shape = prior.noise_shape + 0.5 * static_cast<double>(completed.size());
  double rate = prior.noise_rate + 0.5 * (completed - fitted).squaredNorm();
  if (!(rate > kMinVariance)) {
    warn("draw_noise_var: residual sum of squares is zero; rate clamped to 1e-12");
    rate = kMinVariance;
  }
  return rng.inverse_gamma(shape, rate);
}

double draw_smooth_var(const Eigen::MatrixXd& B, const SplineDesign& design, Rng& rng, const PriorConfig& prior) {
  Eigen::MatrixXd P = design.penalty;
  if (prior.coeff_ridge > 0.0) P.diagonal().array() += prior.coeff_ridge;
  const double shape = prior.smooth_shape + 0.5 * static_cast<double>(B.size());
  double rate = prior.smooth_rate + (B * P * B.transpose()).trace();
  if (!(rate > kMinVariance)) {
    warn("draw_smooth_var: roughness is zero; rate clamped to 1e-12");
    rate = kMinVariance;
  }
  return rng.inverse_gamma(shape, rate);
}

Eigen::MatrixXd impute_entries(const Eigen::MatrixXd& fitted, double noise_var, const Eigen::MatrixXd& values,
                               const MaskMatrix& mask, Rng& rng) {
  if (fitted.rows() != values.rows() || fitted.cols() != values.cols() || mask.rows() != values.rows() ||
      mask.cols() != values.cols()) {
    throw InvalidInput("impute_missing: shape mismatch");
  }
  const double sd = std::sqrt(clamp_variance(noise_var));
  Eigen::MatrixXd out(values.rows(), values.cols());
  for (Eigen::Index k = 0; k < values.cols(); ++k) {
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      out(i, k) = mask(i, k) ? values(i, k) : fitted(i, k) + sd * rng.normal();
    }
  }
  return out;
}

Eigen::MatrixXd fill_missing(const Eigen::MatrixXd& values, const MaskMatrix& mask, const Eigen::MatrixXd& fill) {
  if (fill.rows() != values.rows() || fill.cols() != values.cols()) throw InvalidInput("fill_missing: shape mismatch");
  Eigen::MatrixXd out = fill;
  for (Eigen::Index k = 0; k < values.cols(); ++k) {
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      if (mask(i, k)) out(i, k) = values(i, k);
    }
  }
  return out;
}

Eigen::MatrixXd impute_missing(const Eigen::MatrixXd& fitted, double noise_var, const ObservedFunctionalMatrix& data,
                               Rng& rng) {
  return impute_entries(fitted, noise_var, data.values, data.mask, rng);
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> align_factors(const Eigen::MatrixXd& V, const Eigen::MatrixXd& B,
                                                          const SplineDesign& design) {
  const Eigen::Index R = B.rows();
  const Eigen::MatrixXd U = (B * design.theta).transpose();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(U);
  const Eigen::MatrixXd T = qr.matrixQR().topRows(R).triangularView<Eigen::Upper>();
  const double scale = T.diagonal().cwiseAbs().maxCoeff();
  for (Eigen::Index r = 0; r < R; ++r) {
    if (!(std::abs(T(r, r)) > 1e-12 * scale)) {
      std::ostringstream os;
      os << "eigenfunction " << r << " is linearly dependent on the others; try a smaller number of components R";
      throw DegenerateComponent(os.str());
    }
  }
  // V U^T = (V T^T) Q^T with U = Q T; the SVD of V T^T = P S W^T rotates both factors to principal axes.
  const Eigen::MatrixXd M = V * T.transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeFullV);
  const Eigen::MatrixXd& W = svd.matrixV();
  const Eigen::MatrixXd tinv_b = T.transpose().triangularView<Eigen::Lower>().solve(B);
  return {M * W, W.transpose() * tinv_b};
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> rescale(const Eigen::MatrixXd& V, const Eigen::MatrixXd& B,
                                                    const SplineDesign& design) {
  const Eigen::VectorXd norms = (B * design.theta).rowwise().norm();
  Eigen::MatrixXd Vs = V;
  Eigen::MatrixXd Bs = B;
  for (Eigen::Index r = 0; r < B.rows(); ++r) {
    if (!(norms(r) > 0.0) || !std::isfinite(norms(r))) {
      std::ostringstream os;
      os << "eigenfunction " << r << " has zero norm; try a smaller number of components R";
      throw DegenerateComponent(os.str());
    }
    Bs.row(r) /= norms(r);
    Vs.col(r) *= norms(r);
  }
  return {Vs, Bs};
}

Eigen::MatrixXd project_to_basis(const Eigen::MatrixXd& U, const SplineDesign& design, double penalty_weight) {
  Eigen::MatrixXd lhs = design.theta * design.theta.transpose();
  if (penalty_weight > 0.0) lhs += penalty_weight * design.penalty;
  // Small relative ridge keeps the solve defined on grids that do not resolve every basis function.
  lhs.diagonal().array() += 1e-12 * (lhs.trace() / static_cast<double>(lhs.rows()));
  return lhs.ldlt().solve(design.theta * U).transpose();
}

Eigen::RowVectorXd observed_column_means(const Eigen::MatrixXd& values, const MaskMatrix& mask) {
  double total = 0.0;
  Eigen::Index count = 0;
  Eigen::RowVectorXd means(values.cols());
  std::vector<bool> empty(static_cast<std::size_t>(values.cols()), false);
  for (Eigen::Index k = 0; k < values.cols(); ++k) {
    double s = 0.0;
    Eigen::Index n = 0;
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      if (mask(i, k)) {
        s += values(i, k);
        ++n;
      }
    }
    total += s;
    count += n;
    if (n > 0) {
      means(k) = s / static_cast<double>(n);
    } else {
      empty[static_cast<std::size_t>(k)] = true;
    }
  }
  const double global = count > 0 ? total / static_cast<double>(count) : 0.0;
  for (Eigen::Index k = 0; k < values.cols(); ++k) {
    if (empty[static_cast<std::size_t>(k)]) means(k) = global;
  }
  return means;
}

DrawArchive run_single_chain(const ObservedFunctionalMatrix& data, int R, const SplineDesign& design,
                             const McmcConfig& mcmc, const std::optional<InitialFactors>& init) {
  data.validate();
  mcmc.validate();
  const Eigen::Index N = data.subjects();
  const Eigen::Index K = data.grid_size();
  const Eigen::Index L = design.basis_size();
  if (design.grid_size() != K) throw InvalidInput("spline design and data use different grids");
  if (R < 1) throw InvalidConfiguration("number of components R must be >= 1");
  if (R > std::min(N, K) || R > L) {
    std::ostringstream os;
    os << "R = " << R << " exceeds min(N, K, L) = " << std::min({N, K, L});
    throw InvalidConfiguration(os.str());
  }

  ObservedFunctionalMatrix work = data;
  Eigen::RowVectorXd offset = Eigen::RowVectorXd::Zero(K);
  if (mcmc.center) {
    offset = observed_column_means(data.values, data.mask);
    work.values.rowwise() -= offset;
  }

  Rng rng(mcmc.seed);
  const InitialFactors start = init ? *init : init_single(work, R, design);
  if (start.U.rows() != K || start.U.cols() != R || start.V.rows() != N || start.V.cols() != R) {
    throw InvalidInput("initial factors have the wrong shape");
  }

  const CoefficientPosterior coeff_posterior(design, R, mcmc.prior.coeff_ridge);
  const bool sample_smooth = !mcmc.fixed_smooth_var.has_value();

  Eigen::MatrixXd B = project_to_basis(start.U, design);
  Eigen::MatrixXd V = start.V;
  Eigen::MatrixXd U = start.U;
  Eigen::MatrixXd completed = fill_missing(work.values, work.mask, V * U.transpose());
  double noise_var = 1.0;
  double smooth_var = 1.0;
  if (sample_smooth) {
    const double rough = (B * design.penalty * B.transpose()).trace();
    smooth_var = rough > kMinVariance ? rough / (0.5 * static_cast<double>(R * L)) : 1.0;
  } else {
    smooth_var = *mcmc.fixed_smooth_var;
  }

  DrawArchive archive;
  archive.subjects = N;
  archive.features = 1;
  archive.grid_size = K;
  archive.mask = data.mask;
  archive.rank = R;
  archive.basis_size = static_cast<int>(L);
  archive.burn_in = mcmc.burn_in;
  archive.thinning = mcmc.thinning;
  archive.seed = mcmc.seed;
  archive.datasets.reserve(static_cast<std::size_t>(mcmc.draws));
  archive.params.reserve(static_cast<std::size_t>(mcmc.draws));

  const int total = mcmc.burn_in + mcmc.draws * mcmc.thinning;
  for (int it = 0; it < total; ++it) {
    try {
      V = draw_scores(completed, U, noise_var, rng, mcmc.prior.score_precision);
      const Eigen::MatrixXd cross = V.transpose() * completed * design.theta.transpose();
      B = coeff_posterior.draw(cross, V.transpose() * V, noise_var, smooth_var, rng);
      U = (B * design.theta).transpose();
      const Eigen::MatrixXd fitted = V * U.transpose();
      noise_var = draw_noise_var(completed, fitted, rng, mcmc.prior);
      if (sample_smooth) smooth_var = draw_smooth_var(B, design, rng, mcmc.prior);
      completed = impute_entries(fitted, noise_var, work.values, work.mask, rng);
      if (mcmc.rescale) {
        std::tie(V, B) = rescale(V, B, design);
        if (mcmc.align) std::tie(V, B) = align_factors(V, B, design);
        U = (B * design.theta).transpose();
      }
    } catch (const SingularDesign& e) {
      throw SingularDesign(at_iteration(it, e));
    } catch (const DegenerateComponent& e) {
      throw DegenerateComponent(at_iteration(it, e));
    } catch (const NumericalFailure& e) {
      throw NumericalFailure(at_iteration(it, e));
    }

    if (it >= mcmc.burn_in && (it - mcmc.burn_in + 1) % mcmc.thinning == 0) {
      Eigen::MatrixXd out = completed;
      if (mcmc.center) {
        out.rowwise() += offset;
        out = fill_missing(data.values, data.mask, out);
      }
      archive.datasets.push_back(std::move(out));
      archive.params.push_back(ParameterDraw{V, Eigen::MatrixXd(), B, noise_var, smooth_var});
    }
  }
  return archive;
}

}  // namespace bamifun
