#include "bamifun/multilinear.hpp"

#include "bamifun/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

namespace bamifun {

TimeGrid::TimeGrid(std::vector<double> points) : points_(std::move(points)) {
  if (points_.size() < 2) throw InvalidInput("time grid needs at least 2 points");
  for (std::size_t k = 0; k < points_.size(); ++k) {
    if (!std::isfinite(points_[k])) throw InvalidInput("time grid contains a non-finite point");
    if (k > 0 && !(points_[k] > points_[k - 1])) {
      std::ostringstream os;
      os << "time grid is not strictly increasing at index " << k;
      throw InvalidInput(os.str());
    }
  }
}

TimeGrid TimeGrid::linspace(std::size_t K, double lo, double hi) {
  if (K < 2) throw InvalidInput("time grid needs at least 2 points");
  std::vector<double> pts(K);
  for (std::size_t k = 0; k < K; ++k) {
    pts[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(K - 1);
  }
  pts.back() = hi;
  return TimeGrid(std::move(pts));
}

TimeGrid TimeGrid::unit_fractions(std::size_t K) {
  if (K < 2) throw InvalidInput("time grid needs at least 2 points");
  std::vector<double> pts(K);
  for (std::size_t k = 0; k < K; ++k) pts[k] = static_cast<double>(k + 1) / static_cast<double>(K);
  return TimeGrid(std::move(pts));
}

namespace {

// Knot span index i with knots[i] <= t < knots[i+1], clamped to [degree, L-1].
int find_span(const std::vector<double>& knots, int L, int degree, double t) {
  if (t >= knots[static_cast<std::size_t>(L)]) return L - 1;
  if (t <= knots[static_cast<std::size_t>(degree)]) return degree;
  int low = degree;
  int high = L;
  int mid = (low + high) / 2;
  while (t < knots[static_cast<std::size_t>(mid)] || t >= knots[static_cast<std::size_t>(mid) + 1]) {
    if (t < knots[static_cast<std::size_t>(mid)]) {
      high = mid;
    } else {
      low = mid;
    }
    mid = (low + high) / 2;
  }
  return mid;
}

// Nonzero basis functions on `span` and their derivatives up to order n.
// Returns ders(k, r) = k-th derivative of basis (span - degree + r).
Eigen::MatrixXd span_derivatives(const std::vector<double>& U, int span, double t, int p, int n) {
  Eigen::MatrixXd ndu(p + 1, p + 1);
  std::vector<double> left(static_cast<std::size_t>(p) + 1), right(static_cast<std::size_t>(p) + 1);
  ndu(0, 0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = t - U[static_cast<std::size_t>(span + 1 - j)];
    right[j] = U[static_cast<std::size_t>(span + j)] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu(j, r) = right[r + 1] + left[j - r];
      const double temp = ndu(r, j - 1) / ndu(j, r);
      ndu(r, j) = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu(j, j) = saved;
  }

  Eigen::MatrixXd ders = Eigen::MatrixXd::Zero(n + 1, p + 1);
  for (int j = 0; j <= p; ++j) ders(0, j) = ndu(j, p);
  if (n == 0) return ders;

  Eigen::MatrixXd a(2, p + 1);
  for (int r = 0; r <= p; ++r) {
    int s1 = 0;
    int s2 = 1;
    a(0, 0) = 1.0;
    for (int k = 1; k <= n; ++k) {
      double d = 0.0;
      const int rk = r - k;
      const int pk = p - k;
      if (r >= k) {
        a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
        d = a(s2, 0) * ndu(rk, pk);
      }
      const int j1 = (rk >= -1) ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
        d += a(s2, j) * ndu(rk + j, pk);
      }
      if (r <= pk) {
        a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
        d += a(s2, k) * ndu(r, pk);
      }
      ders(k, r) = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int k = 1; k <= n; ++k) {
    ders.row(k) *= factor;
    factor *= (p - k);
  }
  return ders;
}

}  // namespace

SplineDesign build_bspline_basis(const TimeGrid& grid, int L, int degree) {
  if (degree < 1) throw InvalidConfiguration("spline degree must be at least 1");
  if (L <= degree) {
    std::ostringstream os;
    os << "basis size L = " << L << " must exceed the degree " << degree;
    throw InvalidConfiguration(os.str());
  }
  if (grid.size() < 2) throw InvalidInput("time grid needs at least 2 points");
  if (static_cast<std::size_t>(L) > grid.size()) {
    warn("basis size L = " + std::to_string(L) + " exceeds the number of grid points K = " +
         std::to_string(grid.size()));
  }

  SplineDesign design;
  design.degree = degree;
  const double lo = grid.front();
  const double hi = grid.back();
  const int interior = L - degree - 1;
  design.knots.reserve(static_cast<std::size_t>(L + degree + 1));
  for (int i = 0; i <= degree; ++i) design.knots.push_back(lo);
  for (int i = 1; i <= interior; ++i) {
    design.knots.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(interior + 1));
  }
  for (int i = 0; i <= degree; ++i) design.knots.push_back(hi);

  const auto K = static_cast<Eigen::Index>(grid.size());
  design.theta = Eigen::MatrixXd::Zero(L, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const double t = grid[static_cast<std::size_t>(k)];
    const int span = find_span(design.knots, L, degree, t);
    const Eigen::MatrixXd values = span_derivatives(design.knots, span, t, degree, 0);
    for (int r = 0; r <= degree; ++r) design.theta(span - degree + r, k) = values(0, r);
  }
  return design;
}

Eigen::VectorXd evaluate_basis(const SplineDesign& design, double t, int derivative) {
  const auto L = static_cast<int>(design.knots.size()) - design.degree - 1;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(L);
  if (derivative > design.degree) return out;
  const int span = find_span(design.knots, L, design.degree, t);
  const Eigen::MatrixXd d = span_derivatives(design.knots, span, t, design.degree, derivative);
  for (int r = 0; r <= design.degree; ++r) out(span - design.degree + r) = d(derivative, r);
  return out;
}

void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.assign(static_cast<std::size_t>(n), 0.0);
  weights.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    // Chebyshev-like starting guess, then Newton on P_n.
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    nodes[static_cast<std::size_t>(i)] = x;
    weights[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
}

SplineDesign build_penalty_matrix(SplineDesign design) {
  const Eigen::Index L = design.basis_size();
  design.penalty = Eigen::MatrixXd::Zero(L, L);
  const int p = design.degree;
  if (p < 2) {
    warn("spline degree < 2 has a vanishing second derivative; penalty set to zero");
    return design;
  }
  // Second derivatives are polynomials of degree p - 2 on each span; their product has degree
  // 2p - 4, integrated exactly by p - 1 Gauss points.
  const int n_nodes = std::max(1, p - 1);
  std::vector<double> nodes, weights;
  gauss_legendre(n_nodes, nodes, weights);

  const auto& U = design.knots;
  for (int span = p; span < static_cast<int>(L); ++span) {
    const double a = U[static_cast<std::size_t>(span)];
    const double b = U[static_cast<std::size_t>(span) + 1];
    if (!(b > a)) continue;
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    for (int q = 0; q < n_nodes; ++q) {
      const double t = mid + half * nodes[static_cast<std::size_t>(q)];
      const Eigen::MatrixXd d = span_derivatives(U, span, t, p, 2);
      const double w = half * weights[static_cast<std::size_t>(q)];
      for (int r1 = 0; r1 <= p; ++r1) {
        for (int r2 = 0; r2 <= p; ++r2) {
          design.penalty(span - p + r1, span - p + r2) += w * d(2, r1) * d(2, r2);
        }
      }
    }
  }
  design.penalty = 0.5 * (design.penalty + design.penalty.transpose()).eval();
  return design;
}

SplineDesign make_spline_design(const TimeGrid& grid, int L, int degree) {
  return build_penalty_matrix(build_bspline_basis(grid, L, degree));
}

SplineDesign make_identity_design(std::size_t K) {
  SplineDesign design;
  const auto n = static_cast<Eigen::Index>(K);
  design.theta = Eigen::MatrixXd::Identity(n, n);
  design.penalty = Eigen::MatrixXd::Zero(n, n);
  design.degree = 0;
  return design;
}

Eigen::MatrixXd kronecker(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index j = 0; j < A.cols(); ++j) {
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    }
  }
  return out;
}

Eigen::MatrixXd khatri_rao(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.cols() != B.cols()) {
    std::ostringstream os;
    os << "khatri_rao: column counts differ (" << A.cols() << " vs " << B.cols() << ")";
    throw InvalidInput(os.str());
  }
  Eigen::MatrixXd out(A.rows() * B.rows(), A.cols());
  for (Eigen::Index r = 0; r < A.cols(); ++r) {
    for (Eigen::Index a = 0; a < A.rows(); ++a) {
      out.col(r).segment(a * B.rows(), B.rows()) = A(a, r) * B.col(r);
    }
  }
  return out;
}

Eigen::VectorXd vec(const Eigen::MatrixXd& A) {
  return Eigen::Map<const Eigen::VectorXd>(A.data(), A.size());
}

Eigen::MatrixXd unvec(const Eigen::VectorXd& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) throw InvalidInput("unvec: size mismatch");
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), rows, cols);
}

Tensor3::Tensor3(Eigen::Index N, Eigen::Index J, Eigen::Index K)
    : dims_{N, J, K}, values_(Eigen::VectorXd::Zero(N * J * K)) {
  if (N <= 0 || J <= 0 || K <= 0) throw InvalidInput("tensor dimensions must be positive");
}

Tensor3 Tensor3::from_mode1(const Eigen::MatrixXd& unfolded, Eigen::Index J, Eigen::Index K) {
  if (unfolded.cols() != J * K) throw InvalidInput("mode-1 unfolding has the wrong column count");
  Tensor3 t(unfolded.rows(), J, K);
  t.mode1() = unfolded;
  return t;
}

Eigen::MatrixXd matricize(const Tensor3& t, int mode) {
  const Eigen::Index N = t.dim(1), J = t.dim(2), K = t.dim(3);
  switch (mode) {
    case 1:
      return t.mode1();
    case 2: {
      Eigen::MatrixXd out(J, N * K);
      for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index j = 0; j < J; ++j)
          for (Eigen::Index i = 0; i < N; ++i) out(j, i + N * k) = t(i, j, k);
      return out;
    }
    case 3: {
      Eigen::MatrixXd out(K, N * J);
      for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index j = 0; j < J; ++j)
          for (Eigen::Index i = 0; i < N; ++i) out(k, i + N * j) = t(i, j, k);
      return out;
    }
    default:
      throw InvalidInput("matricize: mode must be 1, 2 or 3");
  }
}

Tensor3 fold(const Eigen::MatrixXd& unfolded, int mode, const std::array<Eigen::Index, 3>& dims) {
  const auto [N, J, K] = dims;
  Tensor3 t(N, J, K);
  switch (mode) {
    case 1:
      if (unfolded.rows() != N || unfolded.cols() != J * K) break;
      t.mode1() = unfolded;
      return t;
    case 2:
      if (unfolded.rows() != J || unfolded.cols() != N * K) break;
      for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index j = 0; j < J; ++j)
          for (Eigen::Index i = 0; i < N; ++i) t(i, j, k) = unfolded(j, i + N * k);
      return t;
    case 3:
      if (unfolded.rows() != K || unfolded.cols() != N * J) break;
      for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index j = 0; j < J; ++j)
          for (Eigen::Index i = 0; i < N; ++i) t(i, j, k) = unfolded(k, i + N * j);
      return t;
    default:
      throw InvalidInput("fold: mode must be 1, 2 or 3");
  }
  throw InvalidInput("fold: unfolding shape does not match the tensor dims");
}

Tensor3 cp_reconstruct(const Eigen::MatrixXd& V, const Eigen::MatrixXd& W, const Eigen::MatrixXd& U) {
  if (V.cols() != W.cols() || V.cols() != U.cols()) throw InvalidInput("cp_reconstruct: rank mismatch");
  const Eigen::MatrixXd unfolded = V * khatri_rao(U, W).transpose();
  return Tensor3::from_mode1(unfolded, W.rows(), U.rows());
}

}  // namespace bamifun
