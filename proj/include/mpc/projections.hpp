#pragma once

// Projections to the simple product constraints: X X^T = C (symmetric
// factors), X Y = 0 (orthogonal factors) and X Y = C with C square and of
// full rank (outer full rank factors).

#include <mpc/matcore.hpp>

#include <Eigen/QR>

#include <optional>
#include <utility>

namespace mpc {

struct FactorPair {
  Matrix X;
  Matrix Y;
};

inline double squared_distance(const FactorPair& a, const FactorPair& b) {
  return (a.X - b.X).squaredNorm() + (a.Y - b.Y).squaredNorm();
}

// ---------------------------------------------------------------------------
// Symmetric factors

/// Constraint X X^T = C held through a factor A (m x r) with A A^T = C.
class GramConstraint {
 public:
  explicit GramConstraint(const Matrix& C, double rank_tol = kRankTol)
      : C_(C), A_(cholesky_psd(C, rank_tol)) {
    verify();
  }

  static GramConstraint from_factor(const Matrix& A) { return GramConstraint(A, A * A.transpose()); }

  const Matrix& A() const { return A_; }
  const Matrix& C() const { return C_; }
  Index rank() const { return A_.cols(); }

 private:
  GramConstraint(const Matrix& A, Matrix C) : C_(std::move(C)), A_(A) { verify(); }

  void verify() const {
    const double err = max_abs(Matrix(A_ * A_.transpose() - C_));
    if (err > 1e-8 * std::max(1.0, max_abs(C_)))
      throw Error(ErrorKind::InvalidInput, "GramConstraint: A A^T does not reproduce C");
  }

  Matrix C_;
  Matrix A_;
};

/// Nearest X with X X^T = C:  X = A * unitarize(A^T X0).
inline Matrix proj_gram(const GramConstraint& gc, const Matrix& X0) {
  if (X0.rows() != gc.A().rows()) throw Error(ErrorKind::InvalidInput, "proj_gram: row count mismatch");
  if (X0.cols() < gc.rank()) throw Error(ErrorKind::InvalidInput, "proj_gram: k must be at least rank(C)");
  if (!X0.allFinite()) throw Error(ErrorKind::InvalidInput, "proj_gram: non-finite input");
  SvdResult d = svd(gc.A().transpose() * X0);
  // Fewer than r directions leaves the nearest point undetermined.
  if (d.rank() < gc.rank()) throw Error(ErrorKind::DegenerateInput, "proj_gram: A^T X0 is rank deficient");
  return gc.A() * (d.U * d.V);
}

// ---------------------------------------------------------------------------
// Orthogonal factors

inline FactorPair proj_orthogonal(const Matrix& X0, const Matrix& Y0) {
  if (X0.cols() != Y0.rows()) throw Error(ErrorKind::InvalidInput, "proj_orthogonal: inner dimensions differ");
  Matrix S = Y0 * Y0.transpose() - X0.transpose() * X0;
  EigSymResult es = eig_sym(S);
  const double tol = es.E.size() ? kRankTol * es.E.cwiseAbs().maxCoeff() : 0.0;
  Index neg = 0;
  while (neg < es.E.size() && es.E(neg) < -tol) ++neg;
  Index pos = 0;
  while (pos < es.E.size() && es.E(es.E.size() - 1 - pos) > tol) ++pos;
  // X keeps its components along the negative eigenspace, Y along the positive one.
  Matrix Vn = es.V.leftCols(neg);
  Matrix Vp = es.V.rightCols(pos);
  return {(X0 * Vn) * Vn.transpose(), Vp * (Vp.transpose() * Y0)};
}

// ---------------------------------------------------------------------------
// Outer full rank factors: X (r x k), Y (k x r), X Y = C with C r x r.

class FullRankConstraint {
 public:
  FullRankConstraint(Matrix C, int refinement_cycles = 10) : C_(std::move(C)), T_(refinement_cycles) {
    if (C_.rows() != C_.cols()) throw Error(ErrorKind::InvalidInput, "FullRankConstraint: C must be square");
    if (T_ < 0) throw Error(ErrorKind::InvalidInput, "FullRankConstraint: T must be non-negative");
    if (svd(C_).rank() != C_.rows())
      throw Error(ErrorKind::InvalidInput, "FullRankConstraint: C is not of full rank");
    norm_ = C_.norm();
  }

  const Matrix& C() const { return C_; }
  Index r() const { return C_.rows(); }
  int T() const { return T_; }
  double norm() const { return norm_; }

 private:
  Matrix C_;
  int T_;
  double norm_ = 0.0;
};

namespace detail {

struct FactorOption {
  FactorPair pair;
  double dist;
};

// Fixing X1 solves X1 dY = C - X1 Y0 with the minimum norm dY. Only valid
// when X1 has full row rank. With X1^T P = Q R, the solution is Q R^-T P^T B.
inline std::optional<FactorOption> fix_x_option(const Matrix& C, const FactorPair& anchor, const Matrix& X1) {
  Eigen::ColPivHouseholderQR<Matrix> qr(X1.transpose());
  qr.setThreshold(kRankTol);
  if (qr.rank() < C.rows()) return std::nullopt;
  const Index r = C.rows();
  Matrix B = qr.colsPermutation().transpose() * (C - X1 * anchor.Y);
  qr.matrixQR().topLeftCorner(r, r).template triangularView<Eigen::Upper>().transpose().solveInPlace(B);
  Matrix dY = qr.householderQ() * (Matrix(X1.cols(), B.cols()) << B, Matrix::Zero(X1.cols() - r, B.cols())).finished();
  FactorOption c{{X1, anchor.Y + dY}, (X1 - anchor.X).squaredNorm() + dY.squaredNorm()};
  if (!std::isfinite(c.dist)) return std::nullopt;
  return c;
}

// Fixing Y1 solves dX Y1 = C - X0 Y1; with Y1 P = Q R, dX = B P R^-1 Q^T.
inline std::optional<FactorOption> fix_y_option(const Matrix& C, const FactorPair& anchor, const Matrix& Y1) {
  Eigen::ColPivHouseholderQR<Matrix> qr(Y1);
  qr.setThreshold(kRankTol);
  if (qr.rank() < C.cols()) return std::nullopt;
  const Index r = C.cols();
  Matrix B = (C - anchor.X * Y1) * qr.colsPermutation();
  qr.matrixQR().topLeftCorner(r, r).template triangularView<Eigen::Upper>().template solveInPlace<Eigen::OnTheRight>(B);
  Matrix padded(B.rows(), Y1.rows());
  padded << B, Matrix::Zero(B.rows(), Y1.rows() - r);
  Matrix dX = padded * qr.householderQ().transpose();
  FactorOption c{{anchor.X + dX, Y1}, dX.squaredNorm() + (Y1 - anchor.Y).squaredNorm()};
  if (!std::isfinite(c.dist)) return std::nullopt;
  return c;
}

inline bool prefer_first(double d1, double d2) {
  // Ties go to the fix-X option.
  return d1 <= d2 || std::abs(d1 - d2) < 1e-12 * (1.0 + std::max(d1, d2));
}

/// Identity-like direction used to lift a rank deficient factor.
inline Matrix canonical_direction(Index rows, Index cols) { return Matrix::Identity(rows, cols); }

}  // namespace detail

/// Maps `current` onto X Y = C by fixing one factor and solving for the other,
/// keeping whichever option lies closer to `anchor`.
inline FactorPair quasiproject(const FullRankConstraint& fc, const FactorPair& anchor, const FactorPair& current) {
  const Matrix& C = fc.C();
  if (current.X.rows() != fc.r() || current.Y.cols() != fc.r() || current.X.cols() != current.Y.rows() ||
      anchor.X.rows() != current.X.rows() || anchor.X.cols() != current.X.cols() ||
      anchor.Y.rows() != current.Y.rows() || anchor.Y.cols() != current.Y.cols())
    throw Error(ErrorKind::InvalidInput, "quasiproject: shape mismatch");
  if (current.X.cols() < fc.r()) throw Error(ErrorKind::InvalidInput, "quasiproject: k must be at least r");
  if (!current.X.allFinite() || !current.Y.allFinite() || !anchor.X.allFinite() || !anchor.Y.allFinite())
    throw Error(ErrorKind::InvalidInput, "quasiproject: non-finite input");

  auto fx = detail::fix_x_option(C, anchor, current.X);
  auto fy = detail::fix_y_option(C, anchor, current.Y);
  if (fx && fy) return detail::prefer_first(fx->dist, fy->dist) ? fx->pair : fy->pair;
  if (fx) return fx->pair;
  if (fy) return fy->pair;
  throw Error(ErrorKind::DegeneratePair, "quasiproject: both factors are rank deficient");
}

/// Exact projection of `anchor` onto the tangent space of X Y = C at the
/// feasible pair `feasible`.
inline FactorPair tangent_project(const FactorPair& anchor, const FactorPair& feasible) {
  const Matrix& X1 = feasible.X;
  const Matrix& Y1 = feasible.Y;
  Matrix R = (anchor.X - X1) * Y1 + X1 * (anchor.Y - Y1);
  Matrix F = sylvester_spd(X1 * X1.transpose(), Y1.transpose() * Y1, R);
  return {anchor.X - F * Y1.transpose(), anchor.Y - X1.transpose() * F};
}

/// Approximate projection to X Y = C: T + 1 quasiprojections interleaved with
/// T tangent-space projections.
inline FactorPair proj_product_fullrank(const FullRankConstraint& fc, const FactorPair& anchor) {
  const double eps = 1e-8 * (1.0 + fc.norm());
  auto q = [&](const FactorPair& current) {
    try {
      return quasiproject(fc, anchor, current);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegeneratePair) throw;
    }
    FactorPair lifted{current.X + eps * detail::canonical_direction(current.X.rows(), current.X.cols()),
                      current.Y + eps * detail::canonical_direction(current.Y.rows(), current.Y.cols())};
    try {
      return quasiproject(fc, anchor, lifted);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegeneratePair) throw;
      throw Error(ErrorKind::ProjectionFailed, "proj_product_fullrank: degenerate pair after perturbation");
    }
  };

  FactorPair cur = q(anchor);
  for (int t = 0; t < fc.T(); ++t) {
    FactorPair tangent;
    try {
      tangent = tangent_project(anchor, cur);
    } catch (const Error& e) {
      // A near-singular pencil means cur is close to losing rank; cur is
      // still feasible, so refinement stops here.
      if (e.kind() != ErrorKind::SingularPencil) throw;
      break;
    }
    cur = q(tangent);
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Complex scalars: x y = c.

struct ScalarPair {
  Complex x;
  Complex y;
};

namespace detail {

inline double sqdist(const ScalarPair& a, const ScalarPair& b) { return std::norm(a.x - b.x) + std::norm(a.y - b.y); }

inline std::optional<ScalarPair> scalar_q(Complex c, const ScalarPair& anchor, const ScalarPair& cur) {
  std::optional<ScalarPair> fx, fy;
  if (cur.x != 0.0) {
    ScalarPair p{cur.x, c / cur.x};
    if (std::isfinite(p.y.real()) && std::isfinite(p.y.imag())) fx = p;
  }
  if (cur.y != 0.0) {
    ScalarPair p{c / cur.y, cur.y};
    if (std::isfinite(p.x.real()) && std::isfinite(p.x.imag())) fy = p;
  }
  if (fx && fy) return prefer_first(sqdist(*fx, anchor), sqdist(*fy, anchor)) ? fx : fy;
  return fx ? fx : fy;
}

}  // namespace detail

inline ScalarPair proj_scalar_product(Complex c, const ScalarPair& anchor, int T) {
  if (T < 0) throw Error(ErrorKind::InvalidInput, "proj_scalar_product: T must be non-negative");
  if (c == 0.0) {
    // x y = 0 is the union of the two axes.
    ScalarPair a{anchor.x, 0.0}, b{0.0, anchor.y};
    return detail::prefer_first(detail::sqdist(a, anchor), detail::sqdist(b, anchor)) ? a : b;
  }
  const double eps = 1e-8 * (1.0 + std::abs(c));
  auto q = [&](const ScalarPair& cur) {
    if (auto p = detail::scalar_q(c, anchor, cur)) return *p;
    if (auto p = detail::scalar_q(c, anchor, {cur.x + eps, cur.y + eps})) return *p;
    throw Error(ErrorKind::ProjectionFailed, "proj_scalar_product: degenerate pair after perturbation");
  };
  ScalarPair cur = q(anchor);
  for (int t = 0; t < T; ++t) {
    const double den = std::norm(cur.x) + std::norm(cur.y);
    const Complex f = ((anchor.x - cur.x) * cur.y + (anchor.y - cur.y) * cur.x) / den;
    cur = q({anchor.x - f * std::conj(cur.y), anchor.y - f * std::conj(cur.x)});
  }
  return cur;
}

}  // namespace mpc
