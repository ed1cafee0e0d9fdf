#pragma once

// Application families: instance generators, exact verifiers and the
// projection pairs (formulations) that the solver iterates.

#include <mpc/compound.hpp>
#include <mpc/solver.hpp>

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mpc {

enum class Family { gram, hadamard, cyclic, nmf_designed, udisj, edm, int2d };
enum class Method { gram, cyclic, rank_limited, rank_excessive, rank1 };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::gram: return "gram";
    case Family::hadamard: return "hadamard";
    case Family::cyclic: return "cyclic";
    case Family::nmf_designed: return "nmf_designed";
    case Family::udisj: return "udisj";
    case Family::edm: return "edm";
    case Family::int2d: return "int2d";
  }
  return "unknown";
}

inline const char* to_string(Method m) {
  switch (m) {
    case Method::gram: return "gram";
    case Method::cyclic: return "cyclic";
    case Method::rank_limited: return "rank_limited";
    case Method::rank_excessive: return "rank_excessive";
    case Method::rank1: return "rank1";
  }
  return "unknown";
}

inline Family parse_family(std::string_view s) {
  for (Family f : {Family::gram, Family::hadamard, Family::cyclic, Family::nmf_designed, Family::udisj, Family::edm,
                   Family::int2d})
    if (s == to_string(f)) return f;
  throw Error(ErrorKind::InvalidInput, "unknown family '" + std::string(s) + "'");
}

inline Method parse_method(std::string_view s) {
  for (Method m : {Method::gram, Method::cyclic, Method::rank_limited, Method::rank_excessive, Method::rank1})
    if (s == to_string(m)) return m;
  throw Error(ErrorKind::InvalidInput, "unknown method '" + std::string(s) + "'");
}

struct InstanceParams {
  long long m = 0;
  long long n = 0;
  long long k = 0;
  long long d = 0;
  double f = 0.0;
  double c = 0.0;
  std::uint64_t seed = 0;
};

/// C is the constraint matrix; for the cyclic family it is the 1 x m
/// coefficient row and the hidden factors are 1 x m rows as well.
struct ProblemInstance {
  Family family = Family::gram;
  InstanceParams params;
  Matrix C;
  std::optional<Matrix> hidden_X;
  std::optional<Matrix> hidden_Y;
};

inline Structure family_structure(Family f) {
  switch (f) {
    case Family::gram:
    case Family::hadamard:
    case Family::cyclic: return Structure::pm_one;
    case Family::int2d: return Structure::integer;
    default: return Structure::nonnegative;
  }
}

namespace detail {

inline bool is_integer_matrix(const Matrix& a, double tol = 1e-9) {
  return ((a.array() - a.array().round()).abs() <= tol).all();
}

using IntMatrix = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>;

inline IntMatrix round_to_int(const Matrix& a) {
  return a.unaryExpr([](double v) { return static_cast<long long>(std::llround(v)); });
}

inline Matrix pm_one_matrix(Rng& rng, Index rows, Index cols) {
  Matrix X(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) X(i, j) = (rng() >> 63) ? 1.0 : -1.0;
  return X;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Gram / Hadamard

inline ProblemInstance gen_gram(long long m, long long k, std::uint64_t seed) {
  if (m < 1 || k < 1) throw Error(ErrorKind::InvalidInput, "gen_gram: m and k must be positive");
  Rng rng(seed);
  Matrix X = detail::pm_one_matrix(rng, m, k);
  ProblemInstance p;
  p.family = Family::gram;
  p.params.m = m;
  p.params.k = k;
  p.params.seed = seed;
  p.C = X * X.transpose();
  p.hidden_X = X;
  return p;
}

/// 12 I + B with B the 16 x 16 block matrix [3J -J -J -J; ...] (J = 4 x 4
/// ones) with its last row and column removed.
inline ProblemInstance maxdet_candidate_15() {
  Matrix B(16, 16);
  for (Index i = 0; i < 16; ++i)
    for (Index j = 0; j < 16; ++j) B(i, j) = (i / 4 == j / 4) ? 3.0 : -1.0;
  ProblemInstance p;
  p.family = Family::gram;
  p.params.m = 15;
  p.params.k = 15;
  p.C = 12.0 * Matrix::Identity(15, 15) + B.topLeftCorner(15, 15);
  return p;
}

inline ProblemInstance gen_hadamard(long long m) {
  if (!(m == 1 || m == 2 || (m > 0 && m % 4 == 0)))
    throw Error(ErrorKind::InvalidInput, "gen_hadamard: m must be 1, 2 or a multiple of 4");
  ProblemInstance p;
  p.family = Family::hadamard;
  p.params.m = m;
  p.params.k = m;
  p.C = static_cast<double>(m) * Matrix::Identity(m, m);
  if ((m & (m - 1)) == 0) {
    // Sylvester construction for powers of two.
    Matrix H = Matrix::Ones(1, 1);
    while (H.rows() < m) {
      Matrix next(2 * H.rows(), 2 * H.rows());
      next << H, H, H, -H;
      H = next;
    }
    p.hidden_X = H;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Cyclic polynomials

inline Vector cyclic_product(const Vector& x, const Vector& y) {
  if (x.size() != y.size() || x.size() == 0) throw Error(ErrorKind::InvalidInput, "cyclic_product: length mismatch");
  const Index m = x.size();
  Vector c = Vector::Zero(m);
  for (Index j = 0; j < m; ++j)
    for (Index l = 0; l < m; ++l) c((j + l) % m) += x(j) * y(l);
  return c;
}

inline ProblemInstance c23_instance() {
  ProblemInstance p;
  p.family = Family::cyclic;
  p.params.m = 23;
  const double c[23] = {1, -3, -3, -3, 1, 1, 1, 1, 1, -3, -3, -3, 1, -3, -3, 1, -3, -3, 1, 1, -3, 1, 1};
  p.C = Matrix(1, 23);
  for (Index i = 0; i < 23; ++i) p.C(0, i) = c[i];
  return p;
}

/// Random ±1 factor pair of length m and their cyclic product.
inline ProblemInstance gen_cyclic(long long m, std::uint64_t seed) {
  if (m < 1) throw Error(ErrorKind::InvalidInput, "gen_cyclic: m must be positive");
  Rng rng(seed);
  Matrix x = detail::pm_one_matrix(rng, 1, m);
  Matrix y = detail::pm_one_matrix(rng, 1, m);
  ProblemInstance p;
  p.family = Family::cyclic;
  p.params.m = m;
  p.params.seed = seed;
  p.C = cyclic_product(x.row(0).transpose(), y.row(0).transpose()).transpose();
  p.hidden_X = x;
  p.hidden_Y = y;
  return p;
}

/// Projection to x * y = c (cyclic convolution) through m independent
/// complex scalar projections in the Fourier domain. Conjugate frequencies
/// are projected once and mirrored.
class CyclicProductConstraint {
 public:
  CyclicProductConstraint(const Vector& c, int T) : dft_(c.size()), T_(T) {
    // The unitary transform turns convolution into xhat * yhat * sqrt(m).
    target_ = dft_.forward(c) / std::sqrt(static_cast<double>(c.size()));
  }

  struct Result {
    Vector x;
    Vector y;
    double imag_residue = 0.0;
  };

  Result project(const Vector& x, const Vector& y) const {
    const Index m = dft_.size();
    ComplexVector xh = dft_.forward(x);
    ComplexVector yh = dft_.forward(y);
    for (Index l = 0; l <= m / 2; ++l) {
      ScalarPair p = proj_scalar_product(target_(l), {xh(l), yh(l)}, T_);
      xh(l) = p.x;
      yh(l) = p.y;
      const Index mirror = (m - l) % m;
      if (mirror != l) {
        xh(mirror) = std::conj(p.x);
        yh(mirror) = std::conj(p.y);
      }
    }
    ComplexVector xo = dft_.inverse_complex(xh);
    ComplexVector yo = dft_.inverse_complex(yh);
    Result r{xo.real(), yo.real(), std::max(xo.imag().cwiseAbs().maxCoeff(), yo.imag().cwiseAbs().maxCoeff())};
    return r;
  }

  Index size() const { return dft_.size(); }

 private:
  Dft dft_;
  ComplexVector target_;
  int T_;
};

inline std::pair<Vector, Vector> fourier_product_projection(const Vector& x, const Vector& y, const Vector& c, int T) {
  if (x.size() != c.size() || y.size() != c.size())
    throw Error(ErrorKind::InvalidInput, "fourier_product_projection: length mismatch");
  auto r = CyclicProductConstraint(c, T).project(x, y);
  return {std::move(r.x), std::move(r.y)};
}

// ---------------------------------------------------------------------------
// Non-negative factorization instances

inline ProblemInstance gen_nmf_designed(long long m, long long n, long long k, double f, std::uint64_t seed) {
  if (m < 1 || n < 1 || k < 1) throw Error(ErrorKind::InvalidInput, "gen_nmf_designed: sizes must be positive");
  if (!(f >= 0.0 && f < 1.0)) throw Error(ErrorKind::InvalidInput, "gen_nmf_designed: f must lie in [0, 1)");
  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    Rng rng(seed + attempt * 0x9E3779B97F4A7C15ULL);
    auto sample = [&](Index rows, Index cols) {
      Matrix A(rows, cols);
      for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) A(i, j) = uniform01(rng);
      std::vector<Index> pos(static_cast<std::size_t>(rows * cols));
      std::iota(pos.begin(), pos.end(), Index{0});
      std::shuffle(pos.begin(), pos.end(), rng);
      const auto zeros = static_cast<std::size_t>(std::floor(f * static_cast<double>(rows * cols)));
      for (std::size_t z = 0; z < zeros; ++z) A(pos[z] / cols, pos[z] % cols) = 0.0;
      return A;
    };
    Matrix X = sample(m, k);
    Matrix Y = sample(k, n);
    // An empty column of X or row of Y makes the inner dimension smaller.
    if ((X.colwise().maxCoeff().array() <= 0.0).any() || (Y.rowwise().maxCoeff().array() <= 0.0).any()) continue;
    Matrix C = X * Y;
    if (svd(C).rank() != k) continue;
    ProblemInstance p;
    p.family = Family::nmf_designed;
    p.params = {m, n, k, 0, f, 0.0, seed};
    p.C = C;
    p.hidden_X = X;
    p.hidden_Y = Y;
    return p;
  }
  throw Error(ErrorKind::GenerationFailed, "gen_nmf_designed: rank condition not reached in 100 attempts");
}

/// Factors with the unique-disjointness sparsity pattern, X_1 = Y_1 = [1].
inline ProblemInstance udisj(long long d) {
  if (d < 1) throw Error(ErrorKind::InvalidInput, "udisj: d must be at least 1");
  if (d > 6) throw Error(ErrorKind::ResourceLimit, "udisj: d > 6 exceeds the memory budget");
  Matrix X = Matrix::Ones(1, 1), Y = Matrix::Ones(1, 1);
  for (long long level = 1; level < d; ++level) {
    const Index a = X.rows(), b = X.cols();
    Matrix Xn = Matrix::Zero(4 * a, 3 * b);
    Xn.block(0, 0, a, b) = X;
    Xn.block(0, b, a, b) = X;
    Xn.block(0, 2 * b, a, b) = X;
    Xn.block(a, b, a, b) = X;
    Xn.block(2 * a, 0, a, b) = X;
    Xn.block(3 * a, 2 * b, a, b) = X;
    const Index p = Y.rows(), q = Y.cols();
    Matrix Yn = Matrix::Zero(3 * p, 4 * q);
    Yn.block(0, 0, p, q) = Y;
    Yn.block(0, q, p, q) = Y;
    Yn.block(p, 0, p, q) = Y;
    Yn.block(p, 2 * q, p, q) = Y;
    Yn.block(2 * p, 0, p, q) = Y;
    Yn.block(2 * p, 3 * q, p, q) = Y;
    X = std::move(Xn);
    Y = std::move(Yn);
  }
  ProblemInstance p;
  p.family = Family::udisj;
  p.params.d = d;
  p.params.m = X.rows();
  p.params.n = Y.cols();
  p.params.k = X.cols();
  p.C = X * Y;
  p.hidden_X = X;
  p.hidden_Y = Y;
  return p;
}

/// Linear Euclidean distance matrix, entries (i - j)^2.
inline ProblemInstance edm(long long m) {
  if (m < 3) throw Error(ErrorKind::InvalidInput, "edm: m must be at least 3");
  ProblemInstance p;
  p.family = Family::edm;
  p.params.m = m;
  p.params.n = m;
  p.C = Matrix(m, m);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < m; ++j) p.C(i, j) = static_cast<double>((i - j) * (i - j));
  return p;
}

inline ProblemInstance int2d(double c) {
  ProblemInstance p;
  p.family = Family::int2d;
  p.params.m = p.params.n = p.params.k = 1;
  p.params.c = c;
  p.C = Matrix::Constant(1, 1, c);
  return p;
}

// ---------------------------------------------------------------------------
// Verification

struct VerifyResult {
  bool accepted = false;
  std::string reason;

  explicit operator bool() const { return accepted; }
  static VerifyResult ok() { return {true, {}}; }
  static VerifyResult reject(std::string why) { return {false, std::move(why)}; }
};

struct Candidate {
  Matrix X;
  Matrix Y;  // empty for the gram and hadamard families
};

namespace detail {

inline VerifyResult verify_pm_one(const Matrix& A) {
  for (Index i = 0; i < A.rows(); ++i)
    for (Index j = 0; j < A.cols(); ++j) {
      const double v = std::round(A(i, j));
      if (v != 1.0 && v != -1.0) return VerifyResult::reject("entry not +-1");
    }
  return VerifyResult::ok();
}

inline VerifyResult verify_rank1_summands(const Matrix& C, const Matrix& X, const Matrix& Y) {
  if (!is_integer_matrix(C)) return VerifyResult::reject("C is not an integer matrix");
  const IntMatrix target = round_to_int(C);
  IntMatrix sum = IntMatrix::Zero(C.rows(), C.cols());
  for (Index l = 0; l < X.cols(); ++l) {
    const IntMatrix Z = round_to_int(X.col(l) * Y.row(l));
    if ((Z.array() < 0).any()) return VerifyResult::reject("negative summand entry");
    Index p = -1, q = -1;
    for (Index j = 0; j < Z.cols() && p < 0; ++j)
      for (Index i = 0; i < Z.rows(); ++i)
        if (Z(i, j) != 0) {
          p = i;
          q = j;
          break;
        }
    if (p >= 0) {
      for (Index i = 0; i < Z.rows(); ++i)
        for (Index j = 0; j < Z.cols(); ++j)
          if (Z(i, j) * Z(p, q) != Z(i, q) * Z(p, j)) return VerifyResult::reject("summand not rank one");
    }
    sum += Z;
  }
  if (sum != target) return VerifyResult::reject("summands do not add up to C");
  return VerifyResult::ok();
}

}  // namespace detail

inline VerifyResult verify_nonnegative(const Matrix& C, const Matrix& X, const Matrix& Y, double tol) {
  if (X.rows() != C.rows() || Y.cols() != C.cols() || X.cols() != Y.rows()) return VerifyResult::reject("shape");
  if (!X.allFinite() || !Y.allFinite()) return VerifyResult::reject("non-finite entry");
  if (std::min(X.minCoeff(), Y.minCoeff()) < -tol) return VerifyResult::reject("negative entry");
  if (max_abs(Matrix(X * Y - C)) > tol * std::max(1.0, max_abs(C))) return VerifyResult::reject("product mismatch");
  return VerifyResult::ok();
}

/// Exact checks: integer arithmetic after rounding for the discrete
/// families, a tolerance for the continuous non-negative ones.
inline VerifyResult verify(const ProblemInstance& inst, const Candidate& cand, double tol = 1e-8) {
  const Matrix& C = inst.C;
  switch (inst.family) {
    case Family::gram:
    case Family::hadamard: {
      if (cand.X.rows() != C.rows() || cand.X.cols() != std::max<Index>(inst.params.k, 1)) return VerifyResult::reject("shape");
      if (auto v = detail::verify_pm_one(cand.X); !v) return v;
      const detail::IntMatrix X = detail::round_to_int(cand.X);
      if (!detail::is_integer_matrix(C)) return VerifyResult::reject("C is not an integer matrix");
      if (detail::IntMatrix(X * X.transpose()) != detail::round_to_int(C)) return VerifyResult::reject("gram mismatch");
      return VerifyResult::ok();
    }
    case Family::cyclic: {
      const Index m = C.cols();
      if (cand.X.rows() != 1 || cand.X.cols() != m || cand.Y.rows() != 1 || cand.Y.cols() != m)
        return VerifyResult::reject("shape");
      if (auto v = detail::verify_pm_one(cand.X); !v) return v;
      if (auto v = detail::verify_pm_one(cand.Y); !v) return v;
      const detail::IntMatrix x = detail::round_to_int(cand.X), y = detail::round_to_int(cand.Y);
      const detail::IntMatrix c = detail::round_to_int(C);
      for (Index k = 0; k < m; ++k) {
        long long acc = 0;
        for (Index j = 0; j < m; ++j) acc += x(0, j) * y(0, ((k - j) % m + m) % m);
        if (acc != c(0, k)) return VerifyResult::reject("cyclic product mismatch");
      }
      return VerifyResult::ok();
    }
    case Family::nmf_designed:
    case Family::udisj: return verify_nonnegative(C, cand.X, cand.Y, tol);
    case Family::edm: {
      if (cand.X.rows() != C.rows() || cand.Y.cols() != C.cols() || cand.X.cols() != cand.Y.rows())
        return VerifyResult::reject("shape");
      if (!cand.X.allFinite() || !cand.Y.allFinite()) return VerifyResult::reject("non-finite entry");
      return detail::verify_rank1_summands(C, cand.X, cand.Y);
    }
    case Family::int2d: {
      if (cand.X.size() != 1 || cand.Y.size() != 1) return VerifyResult::reject("shape");
      const long long x = std::llround(cand.X(0, 0)), y = std::llround(cand.Y(0, 0));
      if (x * y != std::llround(C(0, 0))) return VerifyResult::reject("product mismatch");
      return VerifyResult::ok();
    }
  }
  return VerifyResult::reject("unknown family");
}

// ---------------------------------------------------------------------------
// Special initial point for rank-excessive factorization.

/// (sqrtD(r,k), X_C, X_C, X_perp, X_perp; sqrtD(k,r), Y_C, Y_C, Y_perp, Y_perp)
/// with X_C = U sqrtD(r,k), Y_C = sqrtD(k,r) V, X_perp = max(0, -X_C).
inline RankExcessiveState edm_special_init(const ScaledSvdSetup& setup, Index k) {
  if (setup.mode != SetupMode::full) throw Error(ErrorKind::InvalidInput, "edm_special_init: needs the full setup");
  if (k < setup.r) throw Error(ErrorKind::InvalidInput, "edm_special_init: k must be at least rank(C)");
  RankExcessiveState s;
  s.W = Matrix::Zero(setup.r, k);
  s.Z = Matrix::Zero(k, setup.r);
  for (Index i = 0; i < setup.r; ++i) s.W(i, i) = s.Z(i, i) = std::sqrt(setup.D(i, i));
  s.XC = s.XCt = setup.U * s.W;
  s.YC = s.YCt = s.Z * setup.V;
  s.XP = s.XPt = (-s.XC).cwiseMax(0.0);
  s.YP = s.YPt = (-s.YC).cwiseMax(0.0);
  return s;
}

inline RankExcessiveState edm_special_init(const ProblemInstance& inst, Index k, double g, double h) {
  return edm_special_init(setup_scaled_svd(inst.C, g, h, SetupMode::full), k);
}

// ---------------------------------------------------------------------------
// Formulations

struct FormulationOptions {
  int T = 10;
  double g = 1.0;
  double h = 1.0;
  /// Integer root-lattice structure instead of the simplex for rank1.
  bool lattice = false;
  /// Inner dimension; 0 takes the instance's k.
  Index k = 0;
  double verify_tol = 1e-8;
};

struct Formulation {
  Method method = Method::gram;
  std::shared_ptr<const SplitLayout> layout;
  Projection p1;
  Projection p2;
  Acceptor accept;
  std::function<SplitVariables(std::uint64_t seed)> random_init;
  std::function<SplitVariables()> special_init;  // empty when there is none
  std::function<Candidate(const SplitVariables&)> extract;
  std::string warning;
};

namespace detail {

inline std::shared_ptr<const SplitLayout> make_layout(std::vector<ComponentShape> shapes) {
  return std::make_shared<const SplitLayout>(std::move(shapes));
}

inline Matrix get(const SplitVariables& x, std::string_view name) { return Matrix(x[name]); }

inline Formulation gram_formulation(const ProblemInstance& inst, const FormulationOptions& opt) {
  const Index m = inst.C.rows();
  const Index k = opt.k > 0 ? opt.k : std::max<Index>(inst.params.k, m);
  auto gc = std::make_shared<const GramConstraint>(inst.C);
  if (k < gc->rank()) throw Error(ErrorKind::InvalidInput, "gram: k is smaller than rank(C)");
  Formulation f;
  f.method = Method::gram;
  f.layout = make_layout({{"X", m, k}});
  // Discrete structure first, smooth product constraint second.
  f.p1 = [](const SplitVariables& x) { return x.with(project_structure(Matrix(x[0]), Structure::pm_one).reshaped()); };
  f.p2 = [gc](const SplitVariables& x) {
    Matrix X0 = x[0];
    Matrix X;
    try {
      X = proj_gram(*gc, X0);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateInput) throw;
      const double eps = 1e-8 * (1.0 + gc->C().norm());
      X = proj_gram(*gc, X0 + eps * Matrix::Identity(X0.rows(), X0.cols()));
    }
    return x.with(X.reshaped());
  };
  auto instp = std::make_shared<const ProblemInstance>(inst);
  f.accept = [instp](const SplitVariables& x1, const SplitVariables&) -> std::optional<SplitVariables> {
    if (verify(*instp, {Matrix(x1[0]), Matrix()})) return x1;
    return std::nullopt;
  };
  auto layout = f.layout;
  f.random_init = [layout](std::uint64_t seed) { return init_random(layout, seed, Sampler::uniform_range(-1.0, 1.0)); };
  f.extract = [](const SplitVariables& x) { return Candidate{project_structure(Matrix(x[0]), Structure::pm_one), Matrix()}; };
  return f;
}

inline Formulation cyclic_formulation(const ProblemInstance& inst, const FormulationOptions& opt) {
  const Index m = inst.C.cols();
  auto cp = std::make_shared<const CyclicProductConstraint>(inst.C.row(0).transpose(), opt.T);
  Formulation f;
  f.method = Method::cyclic;
  f.layout = make_layout({{"x", 1, m}, {"y", 1, m}});
  f.p1 = [cp](const SplitVariables& v) {
    auto r = cp->project(v[0].row(0).transpose(), v[1].row(0).transpose());
    SplitVariables out = v;
    out[0].row(0) = r.x.transpose();
    out[1].row(0) = r.y.transpose();
    return out;
  };
  f.p2 = [](const SplitVariables& v) { return v.with(v.flat().unaryExpr([](double a) { return a >= 0.0 ? 1.0 : -1.0; })); };
  auto instp = std::make_shared<const ProblemInstance>(inst);
  f.accept = [instp](const SplitVariables&, const SplitVariables& x2) -> std::optional<SplitVariables> {
    if (verify(*instp, {Matrix(x2[0]), Matrix(x2[1])})) return x2;
    return std::nullopt;
  };
  auto layout = f.layout;
  f.random_init = [layout](std::uint64_t seed) { return init_random(layout, seed, Sampler::uniform_range(-1.0, 1.0)); };
  f.extract = [](const SplitVariables& v) {
    return Candidate{project_structure(Matrix(v[0]), Structure::pm_one), project_structure(Matrix(v[1]), Structure::pm_one)};
  };
  return f;
}

// Typical entry scale for random non-negative starting factors.
inline double factor_scale(const Matrix& C, Index k) {
  const double mean = std::max(C.cwiseAbs().mean(), 1e-12);
  return 2.0 * std::sqrt(mean / static_cast<double>(k));
}

inline Formulation rank_limited_formulation(const ProblemInstance& inst, const FormulationOptions& opt) {
  const Index m = inst.C.rows(), n = inst.C.cols();
  const Index k = opt.k > 0 ? opt.k : inst.params.k;
  const Index r = svd(inst.C).rank();
  if (k < r) throw Error(ErrorKind::InvalidInput, "rank_limited: k is smaller than rank(C)");
  const SetupMode mode = rank_limited_mode(m, n, r);
  const Structure st = family_structure(inst.family);
  auto spec = std::make_shared<const CompoundSpec>(setup_scaled_svd(inst.C, opt.g, opt.h, mode), opt.T, st, st);

  Formulation f;
  f.method = Method::rank_limited;
  if (k > r) f.warning = "rank_limited assumes both factors have rank " + std::to_string(r) + " < k";
  const bool hasW = mode == SetupMode::full || mode == SetupMode::half_right;
  const bool hasZ = mode == SetupMode::full || mode == SetupMode::half_left;
  std::vector<ComponentShape> shapes;
  if (hasW) shapes.push_back({"W", r, k});
  shapes.push_back({"X", m, k});
  if (hasZ) shapes.push_back({"Z", k, r});
  shapes.push_back({"Y", k, n});
  f.layout = make_layout(shapes);

  auto to_state = [hasW, hasZ](const SplitVariables& v) {
    RankLimitedState s;
    if (hasW) s.W = v["W"];
    s.X = v["X"];
    if (hasZ) s.Z = v["Z"];
    s.Y = v["Y"];
    return s;
  };
  auto from_state = [hasW, hasZ](const SplitVariables& like, const RankLimitedState& s) {
    SplitVariables out = like;
    if (hasW) out["W"] = s.W;
    out["X"] = s.X;
    if (hasZ) out["Z"] = s.Z;
    out["Y"] = s.Y;
    return out;
  };
  f.p1 = [=](const SplitVariables& v) { return from_state(v, p1_rank_limited(to_state(v), *spec)); };
  f.p2 = [=](const SplitVariables& v) { return from_state(v, p2_rank_limited(to_state(v), *spec)); };

  auto instp = std::make_shared<const ProblemInstance>(inst);
  const double tol = opt.verify_tol;
  // The structure side is x1 in the full mode and x2 in the direct mode;
  // hybrids split it, so the candidate is re-projected to the structure.
  auto candidate = [st](const SplitVariables& v) {
    return Candidate{project_structure(Matrix(v["X"]), st), project_structure(Matrix(v["Y"]), st)};
  };
  f.accept = [instp, candidate, tol, mode](const SplitVariables& x1, const SplitVariables& x2) -> std::optional<SplitVariables> {
    const SplitVariables& side = mode == SetupMode::direct ? x2 : x1;
    if (verify(*instp, candidate(side), tol)) return side;
    return std::nullopt;
  };
  auto layout = f.layout;
  const double scale = factor_scale(inst.C, k);
  f.random_init = [=](std::uint64_t seed) {
    Rng rng(seed);
    SplitVariables v(layout);
    auto fill = [&](std::string_view name) {
      auto a = v[name];
      for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j) a(i, j) = scale * uniform01(rng);
    };
    fill("X");
    fill("Y");
    const ScaledSvdSetup& su = spec->setup;
    if (hasW) v["W"] = su.U.transpose() * Matrix(v["X"]) / (su.g * su.g);
    if (hasZ) v["Z"] = Matrix(v["Y"]) * su.V.transpose() / (su.h * su.h);
    return v;
  };
  f.extract = candidate;
  return f;
}

inline const char* kExcessiveNames[10] = {"W", "XC", "XCt", "XP", "XPt", "Z", "YC", "YCt", "YP", "YPt"};

inline RankExcessiveState to_excessive(const SplitVariables& v) {
  RankExcessiveState s;
  s.W = v[0];
  s.XC = v[1];
  s.XCt = v[2];
  s.XP = v[3];
  s.XPt = v[4];
  s.Z = v[5];
  s.YC = v[6];
  s.YCt = v[7];
  s.YP = v[8];
  s.YPt = v[9];
  return s;
}

inline SplitVariables from_excessive(const SplitVariables& like, const RankExcessiveState& s) {
  SplitVariables v = like;
  v[0] = s.W;
  v[1] = s.XC;
  v[2] = s.XCt;
  v[3] = s.XP;
  v[4] = s.XPt;
  v[5] = s.Z;
  v[6] = s.YC;
  v[7] = s.YCt;
  v[8] = s.YP;
  v[9] = s.YPt;
  return v;
}

inline Formulation rank_excessive_formulation(const ProblemInstance& inst, const FormulationOptions& opt) {
  const Index m = inst.C.rows(), n = inst.C.cols();
  const Index k = opt.k > 0 ? opt.k : inst.params.k;
  const Structure st = family_structure(inst.family);
  if (st != Structure::nonnegative)
    throw Error(ErrorKind::Unsupported, "rank_excessive: only non-negative structure is supported");
  auto spec = std::make_shared<const CompoundSpec>(setup_scaled_svd(inst.C, opt.g, opt.h, SetupMode::full), opt.T, st, st);
  const Index r = spec->setup.r;
  if (k < r) throw Error(ErrorKind::InvalidInput, "rank_excessive: k is smaller than rank(C)");

  Formulation f;
  f.method = Method::rank_excessive;
  std::vector<ComponentShape> shapes;
  for (int i = 0; i < 10; ++i) {
    const bool left = i < 5;
    const bool inner = i == 0 || i == 5;
    Index rows = inner ? (left ? r : k) : (left ? m : k);
    Index cols = inner ? (left ? k : r) : (left ? k : n);
    shapes.push_back({kExcessiveNames[i], rows, cols});
  }
  f.layout = make_layout(shapes);
  f.p1 = [spec](const SplitVariables& v) { return from_excessive(v, p1_rank_excessive(to_excessive(v), *spec)); };
  f.p2 = [spec](const SplitVariables& v) { return from_excessive(v, p2_rank_excessive(to_excessive(v), spec->setup)); };

  auto instp = std::make_shared<const ProblemInstance>(inst);
  const bool integral = detail::is_integer_matrix(inst.C);
  const double tol = opt.verify_tol;
  auto candidate = [](const SplitVariables& v) {
    FactorPair p = assemble_factors(to_excessive(v));
    return Candidate{std::move(p.X), std::move(p.Y)};
  };
  f.accept = [=](const SplitVariables& x1, const SplitVariables&) -> std::optional<SplitVariables> {
    Candidate c = candidate(x1);
    const bool ok = integral ? bool(detail::verify_rank1_summands(instp->C, c.X, c.Y))
                             : bool(verify_nonnegative(instp->C, c.X, c.Y, tol));
    if (ok) return x1;
    return std::nullopt;
  };
  auto layout = f.layout;
  f.special_init = [spec, layout, k]() {
    return from_excessive(SplitVariables(layout), edm_special_init(spec->setup, k));
  };
  const double scale = factor_scale(inst.C, k);
  f.random_init = [spec, layout, scale](std::uint64_t seed) {
    SplitVariables v = init_random(layout, seed, Sampler::uniform_range(0.0, scale));
    RankExcessiveState s = to_excessive(v);
    s.XCt = s.XC;
    s.XPt = s.XP;
    s.YCt = s.YC;
    s.YPt = s.YP;
    const ScaledSvdSetup& su = spec->setup;
    s.W = su.U.transpose() * s.XC / (su.g * su.g);
    s.Z = s.YC * su.V.transpose() / (su.h * su.h);
    return from_excessive(v, s);
  };
  f.extract = candidate;
  return f;
}

inline RankOneState to_rank1(const SplitVariables& v) {
  RankOneState s;
  for (std::size_t l = 0; l < v.layout().count(); ++l) s.Z.emplace_back(v[l]);
  return s;
}

inline SplitVariables from_rank1(const SplitVariables& like, const RankOneState& s) {
  SplitVariables v = like;
  for (std::size_t l = 0; l < s.Z.size(); ++l) v[l] = s.Z[l];
  return v;
}

inline Formulation rank1_formulation(const ProblemInstance& inst, const FormulationOptions& opt) {
  const Index m = inst.C.rows(), n = inst.C.cols();
  const Index k = opt.k > 0 ? opt.k : inst.params.k;
  if (k < 1) throw Error(ErrorKind::InvalidInput, "rank1: k must be positive");
  if (family_structure(inst.family) != Structure::nonnegative)
    throw Error(ErrorKind::Unsupported, "rank1: only non-negative structure is supported");
  const bool integral = detail::is_integer_matrix(inst.C);
  if (opt.lattice && !integral) throw Error(ErrorKind::InvalidInput, "rank1: lattice structure needs an integer C");
  const Structure st = opt.lattice ? Structure::integer : Structure::nonnegative;

  Formulation f;
  f.method = Method::rank1;
  std::vector<ComponentShape> shapes;
  for (Index l = 0; l < k; ++l) shapes.push_back({"Z" + std::to_string(l + 1), m, n});
  f.layout = make_layout(shapes);
  auto C = std::make_shared<const Matrix>(inst.C);
  f.p1 = [](const SplitVariables& v) { return from_rank1(v, p1_rank1(to_rank1(v))); };
  f.p2 = [C, st](const SplitVariables& v) { return from_rank1(v, p2_rank1(to_rank1(v), *C, st)); };

  auto summand_factors = [](const SplitVariables& v) {
    RankOneState s = to_rank1(v);
    const Index kk = static_cast<Index>(s.Z.size());
    Candidate c{Matrix::Zero(s.Z[0].rows(), kk), Matrix::Zero(kk, s.Z[0].cols())};
    for (Index l = 0; l < kk; ++l) {
      Matrix z = rank1_project(s.Z[static_cast<std::size_t>(l)]).cwiseMax(0.0);
      try {
        FactorPair p = reassemble_rank1(RankOneState{{z}}, Vector::Ones(1), 1e-6);
        c.X.col(l) = p.X.col(0);
        c.Y.row(l) = p.Y.row(0);
      } catch (const Error&) {
      }
    }
    return c;
  };
  const double tol = opt.verify_tol;
  f.accept = [C, integral, tol](const SplitVariables&, const SplitVariables& x2) -> std::optional<SplitVariables> {
    RankOneState s = to_rank1(x2);
    if (integral) {
      const detail::IntMatrix target = detail::round_to_int(*C);
      detail::IntMatrix sum = detail::IntMatrix::Zero(C->rows(), C->cols());
      for (const Matrix& zf : s.Z) {
        const detail::IntMatrix Z = detail::round_to_int(zf);
        if ((Z.array() < 0).any()) return std::nullopt;
        Index p = -1, q = -1;
        for (Index j = 0; j < Z.cols() && p < 0; ++j)
          for (Index i = 0; i < Z.rows(); ++i)
            if (Z(i, j) != 0) {
              p = i;
              q = j;
              break;
            }
        if (p >= 0)
          for (Index i = 0; i < Z.rows(); ++i)
            for (Index j = 0; j < Z.cols(); ++j)
              if (Z(i, j) * Z(p, q) != Z(i, q) * Z(p, j)) return std::nullopt;
        sum += Z;
      }
      if (sum != target) return std::nullopt;
      SplitVariables out = x2;
      out.flat() = out.flat().array().round().matrix();
      return out;
    }
    Matrix sum = Matrix::Zero(C->rows(), C->cols());
    for (const Matrix& z : s.Z) {
      Matrix r1 = rank1_project(z);
      if (max_abs(Matrix(r1 - z)) > tol * std::max(1.0, max_abs(*C))) return std::nullopt;
      sum += z;
    }
    if (max_abs(Matrix(sum - *C)) > tol * std::max(1.0, max_abs(*C))) return std::nullopt;
    return x2;
  };
  auto layout = f.layout;
  const double hi = std::max(inst.C.maxCoeff(), 1e-12);
  f.random_init = [layout, hi](std::uint64_t seed) { return init_random(layout, seed, Sampler::uniform_range(0.0, hi)); };
  f.extract = summand_factors;
  return f;
}

}  // namespace detail

inline Formulation make_formulation(const ProblemInstance& inst, Method method, const FormulationOptions& opt) {
  const Family fam = inst.family;
  auto incompatible = [&]() {
    return Error(ErrorKind::InvalidInput,
                 std::string("method ") + to_string(method) + " does not apply to family " + to_string(fam));
  };
  switch (method) {
    case Method::gram:
      if (fam != Family::gram && fam != Family::hadamard) throw incompatible();
      return detail::gram_formulation(inst, opt);
    case Method::cyclic:
      if (fam != Family::cyclic) throw incompatible();
      return detail::cyclic_formulation(inst, opt);
    case Method::rank_limited:
      if (fam != Family::nmf_designed && fam != Family::udisj && fam != Family::edm && fam != Family::int2d)
        throw incompatible();
      return detail::rank_limited_formulation(inst, opt);
    case Method::rank_excessive:
      if (fam != Family::nmf_designed && fam != Family::udisj && fam != Family::edm) throw incompatible();
      return detail::rank_excessive_formulation(inst, opt);
    case Method::rank1:
      if (fam != Family::nmf_designed && fam != Family::udisj && fam != Family::edm) throw incompatible();
      return detail::rank1_formulation(inst, opt);
  }
  throw incompatible();
}

inline Method default_method(Family f) {
  switch (f) {
    case Family::gram:
    case Family::hadamard: return Method::gram;
    case Family::cyclic: return Method::cyclic;
    case Family::edm: return Method::rank_excessive;
    default: return Method::rank_limited;
  }
}

/// Reference settings per family.
inline SolveConfig default_config(Family f) {
  SolveConfig c;
  c.algorithm = Algorithm::rrr;
  switch (f) {
    case Family::gram:
    case Family::hadamard:
    case Family::cyclic:
      c.beta = 0.2;
      c.T = 1;
      break;
    case Family::nmf_designed:
      c.beta = 0.2;
      c.g = c.h = 1.2;
      c.T = 10;
      break;
    case Family::udisj:
      c.beta = 0.2;
      c.g = c.h = 0.8;
      c.T = 10;
      break;
    case Family::edm:
      c.beta = 1.0;
      c.g = c.h = 0.5;
      c.T = 10;
      break;
    case Family::int2d:
      c.beta = 0.5;
      c.T = 10;
      break;
  }
  return c;
}

/// Whether the family's reference run starts from the special point.
inline bool default_special_init(Family f) { return f == Family::edm; }

struct RunOptions {
  std::optional<Method> method;  // family default when unset
  bool special_init = false;
  bool lattice = false;
  Index k = 0;
  double verify_tol = 1e-8;
};

struct RunResult {
  SolveOutcome outcome;
  Candidate candidate;
  Method method = Method::gram;
  std::string warning;
};

inline FormulationOptions formulation_options(const SolveConfig& cfg, const RunOptions& ro) {
  FormulationOptions o;
  o.T = cfg.T;
  o.g = cfg.g;
  o.h = cfg.h;
  o.lattice = ro.lattice;
  o.k = ro.k;
  o.verify_tol = ro.verify_tol;
  return o;
}

/// Builds the formulation, seeds the start from cfg.seed and iterates.
inline RunResult run(const ProblemInstance& inst, const RunOptions& ro, const SolveConfig& cfg) {
  cfg.validate();
  const Method method = ro.method.value_or(default_method(inst.family));
  Formulation f = make_formulation(inst, method, formulation_options(cfg, ro));
  SplitVariables x0;
  if (ro.special_init) {
    if (!f.special_init) throw Error(ErrorKind::Unsupported, std::string("no special init for method ") + to_string(method));
    x0 = f.special_init();
  } else {
    x0 = f.random_init(cfg.seed);
  }
  SolveHooks hooks;
  hooks.accept = f.accept;
  auto init = f.random_init;
  const std::uint64_t seed = cfg.seed;
  hooks.reinit = [init, seed](long long restart) {
    return init(seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(restart));
  };
  RunResult r;
  r.method = method;
  r.warning = f.warning;
  r.outcome = solve(f.p1, f.p2, x0, cfg, hooks);
  if (r.outcome.solution.size() > 0) r.candidate = f.extract(r.outcome.solution);
  return r;
}

// ---------------------------------------------------------------------------
// Instance manifest: {family, params, files: {C, hidden_X?, hidden_Y?}}

inline nlohmann::json params_to_json(const InstanceParams& p) {
  return {{"m", p.m}, {"n", p.n}, {"k", p.k}, {"d", p.d}, {"f", p.f}, {"c", p.c}, {"seed", p.seed}};
}

inline InstanceParams params_from_json(const nlohmann::json& j) {
  InstanceParams p;
  p.m = j.value("m", 0LL);
  p.n = j.value("n", 0LL);
  p.k = j.value("k", 0LL);
  p.d = j.value("d", 0LL);
  p.f = j.value("f", 0.0);
  p.c = j.value("c", 0.0);
  p.seed = j.value("seed", std::uint64_t{0});
  return p;
}

/// Writes manifest.json plus one matrix file per constant; returns the
/// manifest path.
inline std::filesystem::path save_instance(const std::filesystem::path& dir, const ProblemInstance& inst) {
  std::filesystem::create_directories(dir);
  nlohmann::json files = {{"C", "C.txt"}};
  save_matrix(dir / "C.txt", inst.C);
  if (inst.hidden_X) {
    save_matrix(dir / "hidden_X.txt", *inst.hidden_X);
    files["hidden_X"] = "hidden_X.txt";
  }
  if (inst.hidden_Y) {
    save_matrix(dir / "hidden_Y.txt", *inst.hidden_Y);
    files["hidden_Y"] = "hidden_Y.txt";
  }
  nlohmann::json j = {{"family", to_string(inst.family)}, {"params", params_to_json(inst.params)}, {"files", files}};
  const auto path = dir / "manifest.json";
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::InvalidInput, "cannot write " + path.string());
  os << j.dump(2) << '\n';
  return path;
}

inline ProblemInstance load_instance(const std::filesystem::path& manifest) {
  std::ifstream is(manifest);
  if (!is) throw Error(ErrorKind::InvalidInput, "cannot read " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidInput, std::string("manifest: ") + e.what());
  }
  const auto dir = manifest.parent_path();
  ProblemInstance inst;
  inst.family = parse_family(j.at("family").get<std::string>());
  inst.params = params_from_json(j.value("params", nlohmann::json::object()));
  const auto& files = j.at("files");
  inst.C = load_matrix(dir / files.at("C").get<std::string>());
  if (files.contains("hidden_X")) inst.hidden_X = load_matrix(dir / files["hidden_X"].get<std::string>());
  if (files.contains("hidden_Y")) inst.hidden_Y = load_matrix(dir / files["hidden_Y"].get<std::string>());
  return inst;
}

}  // namespace mpc
