#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <vector>

namespace bamifun {

/// Strictly increasing observation times t_1 < ... < t_K, K >= 2.
class TimeGrid {
 public:
  TimeGrid() = default;
  /// Throws InvalidInput if the points are not finite and strictly increasing, or K < 2.
  explicit TimeGrid(std::vector<double> points);

  /// K equally spaced points on [lo, hi] (both ends included).
  static TimeGrid linspace(std::size_t K, double lo = 0.0, double hi = 1.0);
  /// The simulation grid {1/K, 2/K, ..., 1}.
  static TimeGrid unit_fractions(std::size_t K);

  std::size_t size() const { return points_.size(); }
  double operator[](std::size_t k) const { return points_[k]; }
  const std::vector<double>& points() const { return points_; }
  double front() const { return points_.front(); }
  double back() const { return points_.back(); }

 private:
  std::vector<double> points_;
};

/// Basis values (L x K) and the second-derivative Gram penalty (L x L) of a clamped B-spline basis.
struct SplineDesign {
  Eigen::MatrixXd theta;
  Eigen::MatrixXd penalty;
  int degree = 3;
  std::vector<double> knots;  ///< full knot vector, length L + degree + 1

  Eigen::Index basis_size() const { return theta.rows(); }
  Eigen::Index grid_size() const { return theta.cols(); }
};

/// Clamped B-spline basis on uniformly spaced interior knots over [t_1, t_K].
/// Only `theta`, `degree` and `knots` are filled; the penalty is left empty.
SplineDesign build_bspline_basis(const TimeGrid& grid, int L, int degree = 3);

/// Fills `penalty` with P_{ab} = \int B_a''(t) B_b''(t) dt, integrated exactly by Gauss-Legendre
/// quadrature on every knot span. Degree < 2 gives the zero matrix and a warning.
SplineDesign build_penalty_matrix(SplineDesign design);

/// Convenience: basis followed by penalty.
SplineDesign make_spline_design(const TimeGrid& grid, int L, int degree = 3);

/// Identity basis with zero penalty: every grid value is its own coefficient (no smoothing).
SplineDesign make_identity_design(std::size_t K);

/// Evaluates all L basis functions (or their `derivative`-th derivative) at an arbitrary t inside
/// the knot range. Used for penalty quadrature and for plotting coefficient functions.
Eigen::VectorXd evaluate_basis(const SplineDesign& design, double t, int derivative = 0);

/// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights);

Eigen::MatrixXd kronecker(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

/// Columnwise Kronecker product; row index of the result is a * B.rows() + b.
Eigen::MatrixXd khatri_rao(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

/// Column-stacking vectorization and its inverse.
Eigen::VectorXd vec(const Eigen::MatrixXd& A);
Eigen::MatrixXd unvec(const Eigen::VectorXd& v, Eigen::Index rows, Eigen::Index cols);

/// Dense N x J x K array. Element (i, j, k) lives at i + N * (j + J * k), so the value buffer is
/// exactly the column-major mode-1 unfolding (N x JK) with K varying slowest across columns.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(Eigen::Index N, Eigen::Index J, Eigen::Index K);
  /// Adopts a mode-1 unfolding in the layout above.
  static Tensor3 from_mode1(const Eigen::MatrixXd& unfolded, Eigen::Index J, Eigen::Index K);

  Eigen::Index dim(int mode) const { return dims_[static_cast<std::size_t>(mode - 1)]; }
  std::array<Eigen::Index, 3> dims() const { return dims_; }
  Eigen::Index size() const { return values_.size(); }

  double& operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) {
    return values_[i + dims_[0] * (j + dims_[1] * k)];
  }
  double operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) const {
    return values_[i + dims_[0] * (j + dims_[1] * k)];
  }

  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }

  /// Zero-copy N x JK view.
  Eigen::Map<const Eigen::MatrixXd> mode1() const {
    return {values_.data(), dims_[0], dims_[1] * dims_[2]};
  }
  Eigen::Map<Eigen::MatrixXd> mode1() { return {values_.data(), dims_[0], dims_[1] * dims_[2]}; }

 private:
  std::array<Eigen::Index, 3> dims_{0, 0, 0};
  Eigen::VectorXd values_;
};

/// Mode-k unfolding. Mode 1: N x JK (column j + J k); mode 2: J x NK (column i + N k);
/// mode 3: K x NJ (column i + N j). With these orders, for T = [[V, W, U]]:
///   T_(1) = V khatri_rao(U, W)^T, T_(2) = W khatri_rao(U, V)^T, T_(3) = U khatri_rao(W, V)^T.
Eigen::MatrixXd matricize(const Tensor3& t, int mode);

/// Inverse of matricize for the given dims (N, J, K).
Tensor3 fold(const Eigen::MatrixXd& unfolded, int mode, const std::array<Eigen::Index, 3>& dims);

/// Sum over r of V_r o W_r o U_r.
Tensor3 cp_reconstruct(const Eigen::MatrixXd& V, const Eigen::MatrixXd& W, const Eigen::MatrixXd& U);

}  // namespace bamifun
