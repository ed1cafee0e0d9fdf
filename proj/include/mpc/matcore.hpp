#pragma once

// Dense kernels the projections are built from. Everything here is a pure
// function of its arguments.

#include <mpc/matrix.hpp>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <numbers>
#include <vector>

namespace mpc {

/// Thin SVD A = U * diag(S) * V, truncated to the numerical rank.
/// U is m x r with orthonormal columns, V is r x n with orthonormal rows.
struct SvdResult {
  Matrix U;
  Vector S;
  Matrix V;

  Index rank() const { return S.size(); }
};

/// S = V * diag(E) * V^T with eigenvalues ascending and eigenvectors in the
/// columns of V.
struct EigSymResult {
  Matrix V;
  Vector E;
};

enum class EigSign { negative, positive };

namespace detail {

// Column signs are fixed so that every left singular vector has a
// non-negative entry sum (first nonzero entry positive on a tie). This makes
// the decomposition, and everything seeded from it, reproducible.
inline void canonicalize_signs(Matrix& U, Matrix& V) {
  for (Index j = 0; j < U.cols(); ++j) {
    double s = U.col(j).sum();
    if (std::abs(s) <= 1e-12 * U.col(j).cwiseAbs().sum()) {
      s = 0.0;
      for (Index i = 0; i < U.rows() && s == 0.0; ++i)
        if (std::abs(U(i, j)) > 1e-12) s = U(i, j);
    }
    if (s < 0.0) {
      U.col(j) *= -1.0;
      V.row(j) *= -1.0;
    }
  }
}

}  // namespace detail

inline SvdResult svd(const Matrix& A, double rank_tol = kRankTol) {
  if (!A.allFinite()) throw Error(ErrorKind::InvalidInput, "svd: non-finite input");
  if (A.size() == 0) return {Matrix(A.rows(), 0), Vector(0), Matrix(0, A.cols())};
  Eigen::BDCSVD<Matrix> dec(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = dec.singularValues();
  const double top = sv.size() ? sv(0) : 0.0;
  Index r = 0;
  while (r < sv.size() && top > 0.0 && sv(r) > rank_tol * top) ++r;
  SvdResult out{dec.matrixU().leftCols(r), sv.head(r), dec.matrixV().leftCols(r).transpose()};
  detail::canonicalize_signs(out.U, out.V);
  return out;
}

/// Replaces every retained singular value by one. Directions below the rank
/// tolerance are dropped.
inline Matrix unitarize(const Matrix& A, double rank_tol = kRankTol) {
  SvdResult d = svd(A, rank_tol);
  if (d.rank() == 0 || !(d.S(0) > std::numeric_limits<double>::min()))
    throw Error(ErrorKind::DegenerateInput, "unitarize: matrix is numerically zero");
  return d.U * d.V;
}

inline EigSymResult eig_sym(const Matrix& S) {
  if (S.rows() != S.cols()) throw Error(ErrorKind::InvalidInput, "eig_sym: matrix is not square");
  if (!S.allFinite()) throw Error(ErrorKind::InvalidInput, "eig_sym: non-finite input");
  Matrix sym = 0.5 * (S + S.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw Error(ErrorKind::InvalidInput, "eig_sym: no convergence");
  return {es.eigenvectors(), es.eigenvalues()};
}

/// Spectral projector onto the strictly negative (or strictly positive)
/// eigenspace of S. Eigenvalues with |e| <= zero_tol belong to neither.
inline Matrix eigspace_projector(const Matrix& S, EigSign sign, double zero_tol) {
  EigSymResult es = eig_sym(S);
  Matrix P = Matrix::Zero(S.rows(), S.cols());
  for (Index i = 0; i < es.E.size(); ++i) {
    const bool take = sign == EigSign::negative ? es.E(i) < -zero_tol : es.E(i) > zero_tol;
    if (take) P.noalias() += es.V.col(i) * es.V.col(i).transpose();
  }
  return P;
}

/// Same, with the zero threshold relative to the largest |eigenvalue|.
inline Matrix eigspace_projector(const Matrix& S, EigSign sign) {
  EigSymResult es = eig_sym(S);
  const double tol = es.E.size() ? kRankTol * es.E.cwiseAbs().maxCoeff() : 0.0;
  Matrix P = Matrix::Zero(S.rows(), S.cols());
  for (Index i = 0; i < es.E.size(); ++i) {
    const bool take = sign == EigSign::negative ? es.E(i) < -tol : es.E(i) > tol;
    if (take) P.noalias() += es.V.col(i) * es.V.col(i).transpose();
  }
  return P;
}

/// Rank-revealing factor A (m x r) with A * A^T = C, computed from the
/// symmetric eigendecomposition.
inline Matrix cholesky_psd(const Matrix& C, double rank_tol = kRankTol) {
  EigSymResult es = eig_sym(C);
  const double scale = es.E.size() ? es.E.cwiseAbs().maxCoeff() : 0.0;
  if (es.E.size() && es.E(0) < -std::max(rank_tol * scale, 1e-14))
    throw Error(ErrorKind::NotPSD, "cholesky_psd: matrix has a negative eigenvalue");
  std::vector<Index> keep;
  for (Index i = es.E.size() - 1; i >= 0; --i)
    if (es.E(i) > rank_tol * scale) keep.push_back(i);
  Matrix A(C.rows(), static_cast<Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j)
    A.col(static_cast<Index>(j)) = es.V.col(keep[j]) * std::sqrt(es.E(keep[j]));
  return A;
}

inline Matrix pinv(const Matrix& A, double rank_tol = kRankTol) {
  SvdResult d = svd(A, rank_tol);
  if (d.rank() == 0) return Matrix::Zero(A.cols(), A.rows());
  return d.V.transpose() * d.S.cwiseInverse().asDiagonal() * d.U.transpose();
}

/// Solves A F + F B = R for symmetric positive semidefinite A, B by
/// diagonalizing both and dividing componentwise by (alpha_i + beta_j).
/// Throws SingularPencil when some alpha_i + beta_j <= tol * (|A| + |B|).
inline Matrix sylvester_spd(const Matrix& A, const Matrix& B, const Matrix& R, double tol = 1e-12) {
  if (A.rows() != A.cols() || B.rows() != B.cols() || R.rows() != A.rows() || R.cols() != B.rows())
    throw Error(ErrorKind::InvalidInput, "sylvester_spd: shape mismatch");
  EigSymResult ea = eig_sym(A);
  EigSymResult eb = eig_sym(B);
  const double scale = ea.E.cwiseAbs().maxCoeff() + eb.E.cwiseAbs().maxCoeff();
  Matrix G = ea.V.transpose() * R * eb.V;
  for (Index j = 0; j < G.cols(); ++j)
    for (Index i = 0; i < G.rows(); ++i) {
      const double den = ea.E(i) + eb.E(j);
      if (!(den > tol * scale)) throw Error(ErrorKind::SingularPencil, "sylvester_spd: alpha_i + beta_j vanishes");
      G(i, j) /= den;
    }
  return ea.V * G * eb.V.transpose();
}

// ---------------------------------------------------------------------------
// Unitary DFT with the sign convention  xhat_l = m^{-1/2} sum_k e^{+i 2 pi k l / m} x_k.

class Dft {
 public:
  explicit Dft(Index m) : m_(m), w_(m) {
    if (m < 1) throw Error(ErrorKind::InvalidInput, "dft: length must be positive");
    for (Index j = 0; j < m; ++j)
      w_(j) = std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(m));
  }

  Index size() const { return m_; }

  ComplexVector forward(const Vector& x) const {
    check(x.size());
    ComplexVector out(m_);
    const double norm = 1.0 / std::sqrt(static_cast<double>(m_));
    for (Index l = 0; l < m_; ++l) {
      Complex acc(0.0, 0.0);
      for (Index k = 0; k < m_; ++k) acc += w_((k * l) % m_) * x(k);
      out(l) = acc * norm;
    }
    return out;
  }

  /// Inverse transform. The real part is returned; callers that need to know
  /// how far from real the result was can use inverse_complex.
  Vector inverse(const ComplexVector& xh) const { return inverse_complex(xh).real(); }

  ComplexVector inverse_complex(const ComplexVector& xh) const {
    check(xh.size());
    ComplexVector out(m_);
    const double norm = 1.0 / std::sqrt(static_cast<double>(m_));
    for (Index k = 0; k < m_; ++k) {
      Complex acc(0.0, 0.0);
      for (Index l = 0; l < m_; ++l) acc += std::conj(w_((k * l) % m_)) * xh(l);
      out(k) = acc * norm;
    }
    return out;
  }

 private:
  void check(Index n) const {
    if (n != m_) throw Error(ErrorKind::InvalidInput, "dft: length mismatch");
  }

  Index m_;
  ComplexVector w_;
};

inline ComplexVector dft(const Vector& x) { return Dft(x.size()).forward(x); }
inline Vector idft(const ComplexVector& xh) { return Dft(xh.size()).inverse(xh); }

}  // namespace mpc
