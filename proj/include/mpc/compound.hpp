#pragma once

// Compound projection pairs for general factors:
//  * rank-limited factors (W, X; Z, Y) with X = U W, Y = Z V, W Z = D,
//    plus the hybrid forms where one outer dimension equals rank(C);
//  * rank-excessive factors, ten matrices with replicas and an
//    orthogonality block;
//  * sums of rank-1 summands with simplex / root-lattice structure.

#include <mpc/projections.hpp>

#include <algorithm>
#include <numeric>
#include <vector>

namespace mpc {

enum class Structure { nonnegative, pm_one, integer, none };

inline double project_element(double v, Structure s) {
  switch (s) {
    case Structure::nonnegative: return v > 0.0 ? v : 0.0;
    case Structure::pm_one: return v >= 0.0 ? 1.0 : -1.0;
    case Structure::integer: return std::round(v);
    case Structure::none: return v;
  }
  return v;
}

inline Matrix project_structure(const Matrix& a, Structure s) {
  if (s == Structure::none) return a;
  return a.unaryExpr([s](double v) { return project_element(v, s); });
}

// ---------------------------------------------------------------------------
// Rescaled SVD of the constraint matrix.

enum class SetupMode {
  full,        // C = U D V, product constraint W Z = D
  half_left,   // m == r: product constraint X Z = U D, Y = Z V
  half_right,  // n == r: product constraint W Y = D V, X = U W
  direct,      // m == n == r: product constraint X Y = C directly
};

struct ScaledSvdSetup {
  SetupMode mode = SetupMode::full;
  Matrix U;  // m x r, U^T U = g^2 I
  Matrix V;  // r x n, V V^T = h^2 I
  Matrix D;  // r x r diagonal, U D V = C
  Matrix K;  // constant of the inner product constraint
  double g = 1.0;
  double h = 1.0;
  Index r = 0;
  Index m = 0;
  Index n = 0;
};

inline ScaledSvdSetup setup_scaled_svd(const Matrix& C, double g, double h, SetupMode mode = SetupMode::full) {
  if (!(g > 0.0) || !(h > 0.0)) throw Error(ErrorKind::InvalidInput, "setup_scaled_svd: g and h must be positive");
  SvdResult d = svd(C);
  if (d.rank() == 0) throw Error(ErrorKind::InvalidInput, "setup_scaled_svd: C has rank zero");
  ScaledSvdSetup s;
  s.mode = mode;
  s.r = d.rank();
  s.m = C.rows();
  s.n = C.cols();
  Matrix D = d.S.asDiagonal();
  switch (mode) {
    case SetupMode::full:
      s.g = g;
      s.h = h;
      s.U = g * d.U;
      s.V = h * d.V;
      s.D = D / (g * h);
      s.K = s.D;
      break;
    case SetupMode::half_right:
      if (s.n != s.r) throw Error(ErrorKind::InvalidInput, "setup_scaled_svd: half_right needs n == rank(C)");
      s.g = g;
      s.U = g * d.U;
      s.V = d.V;
      s.D = D / g;
      s.K = s.D * s.V;
      break;
    case SetupMode::half_left:
      if (s.m != s.r) throw Error(ErrorKind::InvalidInput, "setup_scaled_svd: half_left needs m == rank(C)");
      s.h = h;
      s.U = d.U;
      s.V = h * d.V;
      s.D = D / h;
      s.K = s.U * s.D;
      break;
    case SetupMode::direct:
      if (s.m != s.r || s.n != s.r) throw Error(ErrorKind::InvalidInput, "setup_scaled_svd: direct needs m == n == rank(C)");
      s.U = d.U;
      s.V = d.V;
      s.D = D;
      s.K = C;
      break;
  }
  return s;
}

/// Picks the construction for given outer dimensions and rank.
inline SetupMode rank_limited_mode(Index m, Index n, Index r) {
  if (m == r && n == r) return SetupMode::direct;
  if (n == r) return SetupMode::half_right;
  if (m == r) return SetupMode::half_left;
  return SetupMode::full;
}

/// Everything the compound P1 needs besides the state.
struct CompoundSpec {
  ScaledSvdSetup setup;
  FullRankConstraint product;
  Structure sx = Structure::nonnegative;
  Structure sy = Structure::nonnegative;

  CompoundSpec(ScaledSvdSetup s, int T, Structure x = Structure::nonnegative, Structure y = Structure::nonnegative)
      : setup(std::move(s)), product(setup.K, T), sx(x), sy(y) {}
};

// Linear compatibility X = U W (and Y = Z V) in the symmetric metric.
inline void project_left_linear(const ScaledSvdSetup& s, Matrix& W, Matrix& X) {
  W = (W + s.U.transpose() * X) / (s.g * s.g + 1.0);
  X.noalias() = s.U * W;
}

inline void project_right_linear(const ScaledSvdSetup& s, Matrix& Z, Matrix& Y) {
  Z = (Z + Y * s.V.transpose()) / (s.h * s.h + 1.0);
  Y.noalias() = Z * s.V;
}

// ---------------------------------------------------------------------------
// Rank-limited factors

/// Components unused by a hybrid/direct mode are left empty:
/// half_right has no Z, half_left has no W, direct has neither.
struct RankLimitedState {
  Matrix W;  // r x k
  Matrix X;  // m x k
  Matrix Z;  // k x r
  Matrix Y;  // k x n
};

inline RankLimitedState p1_rank_limited(const RankLimitedState& s, const CompoundSpec& spec) {
  RankLimitedState out = s;
  switch (spec.setup.mode) {
    case SetupMode::full: {
      FactorPair p = proj_product_fullrank(spec.product, {s.W, s.Z});
      out.W = std::move(p.X);
      out.Z = std::move(p.Y);
      out.X = project_structure(s.X, spec.sx);
      out.Y = project_structure(s.Y, spec.sy);
      break;
    }
    case SetupMode::half_right: {
      FactorPair p = proj_product_fullrank(spec.product, {s.W, s.Y});
      out.W = std::move(p.X);
      out.Y = std::move(p.Y);
      out.X = project_structure(s.X, spec.sx);
      break;
    }
    case SetupMode::half_left: {
      FactorPair p = proj_product_fullrank(spec.product, {s.X, s.Z});
      out.X = std::move(p.X);
      out.Z = std::move(p.Y);
      out.Y = project_structure(s.Y, spec.sy);
      break;
    }
    case SetupMode::direct: {
      FactorPair p = proj_product_fullrank(spec.product, {s.X, s.Y});
      out.X = std::move(p.X);
      out.Y = std::move(p.Y);
      break;
    }
  }
  return out;
}

inline RankLimitedState p2_rank_limited(const RankLimitedState& s, const CompoundSpec& spec) {
  RankLimitedState out = s;
  const ScaledSvdSetup& st = spec.setup;
  switch (st.mode) {
    case SetupMode::full:
      project_left_linear(st, out.W, out.X);
      project_right_linear(st, out.Z, out.Y);
      break;
    case SetupMode::half_right:
      project_left_linear(st, out.W, out.X);
      out.Y = project_structure(s.Y, spec.sy);
      break;
    case SetupMode::half_left:
      out.X = project_structure(s.X, spec.sx);
      project_right_linear(st, out.Z, out.Y);
      break;
    case SetupMode::direct:
      out.X = project_structure(s.X, spec.sx);
      out.Y = project_structure(s.Y, spec.sy);
      break;
  }
  return out;
}

/// P2 for the full mode only needs the setup.
inline RankLimitedState p2_rank_limited(const RankLimitedState& s, const ScaledSvdSetup& setup) {
  if (setup.mode != SetupMode::full)
    throw Error(ErrorKind::InvalidInput, "p2_rank_limited: hybrid modes need the structure spec");
  RankLimitedState out = s;
  project_left_linear(setup, out.W, out.X);
  project_right_linear(setup, out.Z, out.Y);
  return out;
}

// ---------------------------------------------------------------------------
// Rank-excessive factors

struct RankExcessiveState {
  Matrix W;                           // r x k
  Matrix XC, XCt, XP, XPt;            // m x k: X_C, ~X_C, X_perp, ~X_perp
  Matrix Z;                           // k x r
  Matrix YC, YCt, YP, YPt;            // k x n: Y_C, ~Y_C, Y_perp, ~Y_perp
};

struct Four {
  double c, ct, p, pt;
};

/// Replica equalization followed by non-negativity of the part sum.
inline Four nonneg_four(double xc, double xct, double xp, double xpt) {
  const double bc = 0.5 * (xc + xct);
  const double bp = 0.5 * (xp + xpt);
  if (bc + bp >= 0.0) return {bc, bc, bp, bp};
  const double dx = 0.5 * (bc - bp);
  return {dx, dx, -dx, -dx};
}

namespace detail {

inline void project_replicas(Matrix& c, Matrix& ct, Matrix& p, Matrix& pt, Structure s) {
  if (s != Structure::nonnegative && s != Structure::none)
    throw Error(ErrorKind::Unsupported, "rank-excessive structure must be nonnegative or none");
  for (Index j = 0; j < c.cols(); ++j)
    for (Index i = 0; i < c.rows(); ++i) {
      Four f;
      if (s == Structure::nonnegative) {
        f = nonneg_four(c(i, j), ct(i, j), p(i, j), pt(i, j));
      } else {
        const double bc = 0.5 * (c(i, j) + ct(i, j));
        const double bp = 0.5 * (p(i, j) + pt(i, j));
        f = {bc, bc, bp, bp};
      }
      c(i, j) = f.c;
      ct(i, j) = f.ct;
      p(i, j) = f.p;
      pt(i, j) = f.pt;
    }
}

}  // namespace detail

inline RankExcessiveState p1_rank_excessive(const RankExcessiveState& s, const CompoundSpec& spec) {
  if (spec.setup.mode != SetupMode::full)
    throw Error(ErrorKind::InvalidInput, "p1_rank_excessive: needs the full setup");
  RankExcessiveState out = s;
  FactorPair p = proj_product_fullrank(spec.product, {s.W, s.Z});
  out.W = std::move(p.X);
  out.Z = std::move(p.Y);
  detail::project_replicas(out.XC, out.XCt, out.XP, out.XPt, spec.sx);
  detail::project_replicas(out.YC, out.YCt, out.YP, out.YPt, spec.sy);
  return out;
}

inline RankExcessiveState p2_rank_excessive(const RankExcessiveState& s, const ScaledSvdSetup& setup) {
  RankExcessiveState out = s;
  project_left_linear(setup, out.W, out.XC);
  project_right_linear(setup, out.Z, out.YC);

  const Index k = s.XC.cols();
  Matrix X3(s.XC.rows(), 3 * k);
  X3 << s.XCt, s.XP, s.XPt;
  Matrix Y3(3 * k, s.YC.cols());
  Y3 << s.YP, s.YCt, s.YPt;
  FactorPair o = proj_orthogonal(X3, Y3);
  out.XCt = o.X.leftCols(k);
  out.XP = o.X.middleCols(k, k);
  out.XPt = o.X.rightCols(k);
  out.YP = o.Y.topRows(k);
  out.YCt = o.Y.middleRows(k, k);
  out.YPt = o.Y.bottomRows(k);
  return out;
}

/// The factors X = X_C + X_perp, Y = Y_C + Y_perp represented by a state.
inline FactorPair assemble_factors(const RankExcessiveState& s) { return {s.XC + s.XP, s.YC + s.YP}; }

// ---------------------------------------------------------------------------
// Rank-1 summands

struct RankOneState {
  std::vector<Matrix> Z;
};

inline Matrix rank1_project(const Matrix& Z) {
  if (Z.size() == 0 || Z.isZero(0.0)) return Matrix::Zero(Z.rows(), Z.cols());
  Eigen::JacobiSVD<Matrix> dec(Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return dec.singularValues()(0) * dec.matrixU().col(0) * dec.matrixV().col(0).transpose();
}

/// Euclidean projection onto {z >= 0, sum z = c}: shift uniformly to the
/// right sum, zero the non-positive entries and repeat on the positive ones.
inline Vector simplex_project(const Vector& z, double c) {
  if (z.size() == 0) throw Error(ErrorKind::InvalidInput, "simplex_project: empty vector");
  if (!(c >= 0.0)) throw Error(ErrorKind::InvalidInput, "simplex_project: c must be non-negative");
  const Index k = z.size();
  std::vector<Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return z(a) > z(b); });

  Index n = k;
  double prefix = 0.0;
  for (Index i = 0; i < n; ++i) prefix += z(order[static_cast<std::size_t>(i)]);
  double shift = 0.0;
  while (n > 0) {
    shift = (c - prefix) / static_cast<double>(n);
    Index pos = 0;
    while (pos < n && z(order[static_cast<std::size_t>(pos)]) + shift > 0.0) ++pos;
    if (pos == n) break;
    for (Index i = pos; i < n; ++i) prefix -= z(order[static_cast<std::size_t>(i)]);
    n = pos;
  }
  Vector out = Vector::Zero(k);
  for (Index i = 0; i < n; ++i) {
    const Index idx = order[static_cast<std::size_t>(i)];
    out(idx) = z(idx) + shift;
  }
  return out;
}

using IntVector = Eigen::Matrix<long long, Eigen::Dynamic, 1>;

/// Nearest non-negative integer vector with sum c, reached by simplex
/// projection followed by A_{k-1} lattice rounding. On equal rounding
/// residues the lower index receives the larger value.
inline IntVector lattice_project(const Vector& z, long long c) {
  if (c < 0) throw Error(ErrorKind::InvalidInput, "lattice_project: c must be non-negative");
  Vector p = simplex_project(z, static_cast<double>(c));
  const Index k = p.size();
  IntVector r(k);
  Vector resid(k);
  long long sum = 0;
  for (Index i = 0; i < k; ++i) {
    r(i) = std::llround(p(i));
    resid(i) = p(i) - static_cast<double>(r(i));
    sum += r(i);
  }
  long long deficit = c - sum;
  if (deficit != 0) {
    std::vector<Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), Index{0});
    if (deficit > 0) {
      // Raise the coordinates that were rounded down the most.
      std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return resid(a) > resid(b); });
      for (std::size_t i = 0; deficit > 0 && i < order.size(); ++i, --deficit) r(order[i]) += 1;
    } else {
      // Lower the ones rounded up the most; later indices first on ties.
      std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        if (resid(a) != resid(b)) return resid(a) < resid(b);
        return a > b;
      });
      for (std::size_t i = 0; deficit < 0 && i < order.size(); ++i) {
        if (r(order[i]) > 0) {
          r(order[i]) -= 1;
          ++deficit;
        }
      }
    }
  }
  return r;
}

inline RankOneState p1_rank1(const RankOneState& s) {
  RankOneState out;
  out.Z.reserve(s.Z.size());
  for (const Matrix& z : s.Z) out.Z.push_back(rank1_project(z));
  return out;
}

inline RankOneState p2_rank1(const RankOneState& s, const Matrix& C, Structure structure) {
  if (s.Z.empty()) throw Error(ErrorKind::InvalidInput, "p2_rank1: no summands");
  if (structure != Structure::nonnegative && structure != Structure::integer)
    throw Error(ErrorKind::Unsupported, "p2_rank1: structure must be nonnegative or integer");
  if (C.minCoeff() < 0.0) throw Error(ErrorKind::InvalidInput, "p2_rank1: C has negative entries");
  const Index k = static_cast<Index>(s.Z.size());
  RankOneState out = s;
  Vector tuple(k);
  for (Index j = 0; j < C.cols(); ++j)
    for (Index i = 0; i < C.rows(); ++i) {
      for (Index l = 0; l < k; ++l) tuple(l) = s.Z[static_cast<std::size_t>(l)](i, j);
      if (structure == Structure::nonnegative) {
        Vector p = simplex_project(tuple, C(i, j));
        for (Index l = 0; l < k; ++l) out.Z[static_cast<std::size_t>(l)](i, j) = p(l);
      } else {
        const double cij = std::round(C(i, j));
        if (std::abs(cij - C(i, j)) > 1e-9)
          throw Error(ErrorKind::InvalidInput, "p2_rank1: integer structure needs an integer C");
        IntVector p = lattice_project(tuple, static_cast<long long>(cij));
        for (Index l = 0; l < k; ++l) out.Z[static_cast<std::size_t>(l)](i, j) = static_cast<double>(p(l));
      }
    }
  return out;
}

/// Recovers non-negative factors from rank-1 summands: x^l_i = a^l on the
/// first nonzero row i, y^l from that row, then x^l from the largest y^l_j.
inline FactorPair reassemble_rank1(const RankOneState& s, const Vector& scale, double tol = 1e-8) {
  const Index k = static_cast<Index>(s.Z.size());
  if (k == 0 || scale.size() != k) throw Error(ErrorKind::InvalidInput, "reassemble_rank1: need one scale per summand");
  const Index m = s.Z[0].rows(), n = s.Z[0].cols();
  FactorPair out{Matrix::Zero(m, k), Matrix::Zero(k, n)};
  for (Index l = 0; l < k; ++l) {
    const Matrix& Z = s.Z[static_cast<std::size_t>(l)];
    const double a = scale(l);
    if (!(a > 0.0)) throw Error(ErrorKind::InvalidInput, "reassemble_rank1: scales must be positive");
    const double big = max_abs(Z);
    if (big == 0.0) continue;
    if (Z.minCoeff() < -tol * big) throw Error(ErrorKind::InvalidInput, "reassemble_rank1: negative summand entry");
    Index row = 0;
    while (Z.row(row).maxCoeff() <= tol * big) ++row;
    Vector y = Z.row(row).transpose() / a;
    Index col = 0;
    y.maxCoeff(&col);
    Vector x = Z.col(col) / y(col);
    if (max_abs(Matrix(x * y.transpose() - Z)) > tol * (1.0 + big))
      throw Error(ErrorKind::NotRankOne, "reassemble_rank1: summand is not rank one");
    out.X.col(l) = x.cwiseMax(0.0);
    out.Y.row(l) = y.transpose().cwiseMax(0.0);
  }
  return out;
}

}  // namespace mpc
