#include "bamifun/multiway_gibbs.hpp"

#include "bamifun/errors.hpp"

#include <cmath>
#include <sstream>

namespace bamifun {
namespace {

std::string at_iteration(int it, const std::exception& e) {
  std::ostringstream os;
  os << "iteration " << it << ": " << e.what();
  return os.str();
}

// Least-squares factor update F = Y G (G^T G)^{-1} with G^T G supplied as a Hadamard product.
Eigen::MatrixXd als_update(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& G, const Eigen::MatrixXd& gtg) {
  Eigen::MatrixXd lhs = gtg;
  lhs.diagonal().array() += 1e-10 * std::max(1.0, lhs.trace());
  return lhs.ldlt().solve((Y * G).transpose()).transpose();
}

}  // namespace

void ObservedFunctionalTensor::validate() const {
  const Eigen::Index N = values.dim(1), J = values.dim(2), K = values.dim(3);
  if (mask.rows() != N || mask.cols() != J * K) throw InvalidInput("tensor mask has the wrong shape");
  if (static_cast<std::size_t>(K) != grid.size()) throw InvalidInput("tensor time mode does not match the grid");
  int sparse = 0;
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index j = 0; j < J; ++j) {
      int observed = 0;
      for (Eigen::Index k = 0; k < K; ++k) {
        if (!mask(i, j + J * k)) continue;
        if (!std::isfinite(values(i, j, k))) throw InvalidInput("observed values must be finite");
        ++observed;
      }
      if (observed == 0) {
        std::ostringstream os;
        os << "subject " << i << ", feature " << j << " has no observed values";
        throw InvalidInput(os.str());
      }
      if (observed < 2) ++sparse;
    }
  }
  if (sparse > 0) warn(std::to_string(sparse) + " subject-feature curve(s) have a single observed value");
}

Eigen::MatrixXd draw_factor_rows(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& G, double noise_var, Rng& rng,
                                 double prior_precision) {
  return draw_regression_rows(Y, G, noise_var, rng, prior_precision, "draw_factor_rows");
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> multiway_coeff_statistics(const Tensor3& completed,
                                                                      const Eigen::MatrixXd& V,
                                                                      const Eigen::MatrixXd& W,
                                                                      const SplineDesign& design) {
  const Eigen::Index J = completed.dim(2), K = completed.dim(3), R = V.cols();
  // (X_(3) (W . V))_{kr} = sum_{i,j} X_ijk V_ir W_jr, accumulated from the mode-1 layout.
  const Eigen::MatrixXd T = V.transpose() * completed.mode1();  // R x JK
  Eigen::MatrixXd x3a = Eigen::MatrixXd::Zero(K, R);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index j = 0; j < J; ++j) {
      x3a.row(k) += T.col(j + J * k).transpose().cwiseProduct(W.row(j));
    }
  }
  Eigen::MatrixXd cross = x3a.transpose() * design.theta.transpose();
  Eigen::MatrixXd gram = (W.transpose() * W).cwiseProduct(V.transpose() * V);
  return {std::move(cross), std::move(gram)};
}

Eigen::MatrixXd draw_multiway_coeffs(const Tensor3& completed, const Eigen::MatrixXd& V, const Eigen::MatrixXd& W,
                                     double noise_var, double smooth_var, const SplineDesign& design, Rng& rng) {
  const auto [cross, gram] = multiway_coeff_statistics(completed, V, W, design);
  const CoefficientPosterior posterior(design, V.cols());
  return posterior.draw(cross, gram, noise_var, smooth_var, rng);
}

double draw_multiway_noise_var(const Tensor3& completed, const Tensor3& fitted, Rng& rng) {
  if (completed.dims() != fitted.dims()) throw InvalidInput("draw_multiway_noise_var: shape mismatch");
  return draw_noise_var(completed.mode1(), fitted.mode1(), rng);
}

Tensor3 multiway_fitted(const Eigen::MatrixXd& V, const Eigen::MatrixXd& W, const Eigen::MatrixXd& B,
                        const SplineDesign& design) {
  return cp_reconstruct(V, W, (B * design.theta).transpose());
}

MultiwayChainState rebalance_norms(MultiwayChainState state, const SplineDesign& design) {
  const Eigen::MatrixXd curves = state.coeffs * design.theta;
  for (Eigen::Index r = 0; r < state.coeffs.rows(); ++r) {
    const double a = state.subj.col(r).norm();
    const double b = state.feat.col(r).norm();
    const double c = curves.row(r).norm();
    if (!(a > 0.0) || !(b > 0.0) || !(c > 0.0) || !std::isfinite(a * b * c)) {
      std::ostringstream os;
      os << "component " << r << " has a zero-norm factor; try a smaller number of components R";
      throw DegenerateComponent(os.str());
    }
    const double g = std::cbrt(a * b * c);
    state.subj.col(r) *= g / a;
    state.feat.col(r) *= g / b;
    state.coeffs.row(r) *= g / c;
  }
  return state;
}

MultiwayChainState init_multiway(const ObservedFunctionalTensor& data, int R, const SplineDesign& design, Rng& rng,
                                 int als_sweeps) {
  const Eigen::Index N = data.values.dim(1), J = data.values.dim(2), K = data.values.dim(3);
  const auto& X = data.values.mode1();
  const auto& O = data.mask;

  // Slice means over subjects; fall back to the feature mean, then the global mean.
  double global = 0.0;
  Eigen::Index global_n = 0;
  Eigen::VectorXd feat_sum = Eigen::VectorXd::Zero(J), feat_n = Eigen::VectorXd::Zero(J);
  Eigen::MatrixXd slice_sum = Eigen::MatrixXd::Zero(J, K), slice_n = Eigen::MatrixXd::Zero(J, K);
  for (Eigen::Index c = 0; c < J * K; ++c) {
    const Eigen::Index j = c % J, k = c / J;
    for (Eigen::Index i = 0; i < N; ++i) {
      if (!O(i, c)) continue;
      slice_sum(j, k) += X(i, c);
      slice_n(j, k) += 1.0;
      feat_sum(j) += X(i, c);
      feat_n(j) += 1.0;
      global += X(i, c);
      ++global_n;
    }
  }
  global = global_n > 0 ? global / static_cast<double>(global_n) : 0.0;
  Eigen::MatrixXd fill(N, J * K);
  for (Eigen::Index c = 0; c < J * K; ++c) {
    const Eigen::Index j = c % J, k = c / J;
    double m = global;
    if (slice_n(j, k) > 0) {
      m = slice_sum(j, k) / slice_n(j, k);
    } else if (feat_n(j) > 0) {
      m = feat_sum(j) / feat_n(j);
    }
    fill.col(c).setConstant(m);
  }
  const Tensor3 filled = Tensor3::from_mode1(fill_missing(X, O, fill), J, K);

  Eigen::MatrixXd V = rng.normal_matrix(N, R);
  Eigen::MatrixXd W = rng.normal_matrix(J, R);
  Eigen::MatrixXd U = rng.normal_matrix(K, R);
  const Eigen::MatrixXd X1 = filled.mode1();
  const Eigen::MatrixXd X2 = matricize(filled, 2);
  const Eigen::MatrixXd X3 = matricize(filled, 3);
  for (int sweep = 0; sweep < als_sweeps; ++sweep) {
    V = als_update(X1, khatri_rao(U, W), (U.transpose() * U).cwiseProduct(W.transpose() * W));
    W = als_update(X2, khatri_rao(U, V), (U.transpose() * U).cwiseProduct(V.transpose() * V));
    U = als_update(X3, khatri_rao(W, V), (W.transpose() * W).cwiseProduct(V.transpose() * V));
  }

  const double tr_p = design.penalty.size() > 0 ? design.penalty.trace() : 0.0;
  const double weight = tr_p > 0.0 ? 1e-4 * (design.theta * design.theta.transpose()).trace() / tr_p : 0.0;

  MultiwayChainState state;
  state.subj = V;
  state.feat = W;
  state.coeffs = project_to_basis(U, design, weight);
  state = rebalance_norms(std::move(state), design);
  const Tensor3 fitted = multiway_fitted(state.subj, state.feat, state.coeffs, design);
  state.completed = Tensor3::from_mode1(fill_missing(X, O, fitted.mode1()), J, K);
  return state;
}

DrawArchive run_multiway_chain(const ObservedFunctionalTensor& data, int R, const SplineDesign& design,
                               const McmcConfig& mcmc) {
  data.validate();
  mcmc.validate();
  const Eigen::Index N = data.values.dim(1), J = data.values.dim(2), K = data.values.dim(3);
  const Eigen::Index L = design.basis_size();
  if (design.grid_size() != K) throw InvalidInput("spline design and data use different grids");
  if (R < 1) throw InvalidConfiguration("number of components R must be >= 1");
  if (R > L || R > N * J) {
    std::ostringstream os;
    os << "R = " << R << " exceeds the basis size or the number of curves";
    throw InvalidConfiguration(os.str());
  }

  Rng rng(mcmc.seed);
  MultiwayChainState state = init_multiway(data, R, design, rng);
  const CoefficientPosterior coeff_posterior(design, R, mcmc.prior.coeff_ridge);
  const bool sample_smooth = !mcmc.fixed_smooth_var.has_value();
  state.noise_var = 1.0;
  if (sample_smooth) {
    const double rough = (state.coeffs * design.penalty * state.coeffs.transpose()).trace();
    state.smooth_var = rough > 1e-12 ? rough / (0.5 * static_cast<double>(R * L)) : 1.0;
  } else {
    state.smooth_var = *mcmc.fixed_smooth_var;
  }

  DrawArchive archive;
  archive.subjects = N;
  archive.features = J;
  archive.grid_size = K;
  archive.mask = data.mask;
  archive.rank = R;
  archive.basis_size = static_cast<int>(L);
  archive.burn_in = mcmc.burn_in;
  archive.thinning = mcmc.thinning;
  archive.seed = mcmc.seed;

  const int total = mcmc.burn_in + mcmc.draws * mcmc.thinning;
  for (int it = 0; it < total; ++it) {
    try {
      const Eigen::MatrixXd U = (state.coeffs * design.theta).transpose();
      const double kappa = mcmc.prior.score_precision;
      state.subj = draw_factor_rows(state.completed.mode1(), khatri_rao(U, state.feat), state.noise_var, rng, kappa);
      state.feat =
          draw_factor_rows(matricize(state.completed, 2), khatri_rao(U, state.subj), state.noise_var, rng, kappa);
      const auto [cross, gram] = multiway_coeff_statistics(state.completed, state.subj, state.feat, design);
      state.coeffs = coeff_posterior.draw(cross, gram, state.noise_var, state.smooth_var, rng);
      const Tensor3 fitted = multiway_fitted(state.subj, state.feat, state.coeffs, design);
      state.noise_var = draw_noise_var(state.completed.mode1(), fitted.mode1(), rng, mcmc.prior);
      if (sample_smooth) state.smooth_var = draw_smooth_var(state.coeffs, design, rng, mcmc.prior);
      state.completed.mode1() = impute_entries(fitted.mode1(), state.noise_var, data.values.mode1(), data.mask, rng);
      if (mcmc.rescale) state = rebalance_norms(std::move(state), design);
    } catch (const SingularDesign& e) {
      throw SingularDesign(at_iteration(it, e));
    } catch (const DegenerateComponent& e) {
      throw DegenerateComponent(at_iteration(it, e));
    } catch (const NumericalFailure& e) {
      throw NumericalFailure(at_iteration(it, e));
    }

    if (it >= mcmc.burn_in && (it - mcmc.burn_in + 1) % mcmc.thinning == 0) {
      archive.datasets.push_back(state.completed.mode1());
      archive.params.push_back(
          ParameterDraw{state.subj, state.feat, state.coeffs, state.noise_var, state.smooth_var});
    }
  }
  return archive;
}

}  // namespace bamifun
