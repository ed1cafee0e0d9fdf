#include <gtest/gtest.h>

#include "test_util.hpp"

#include <filesystem>
#include <limits>

#include <unistd.h>

using namespace mpc;

namespace {

Vector circulant_product(const Vector& x, const Vector& y) {
  const Index m = x.size();
  Matrix M(m, m);
  for (Index k = 0; k < m; ++k)
    for (Index j = 0; j < m; ++j) M(k, j) = y(((k - j) % m + m) % m);
  return M * x;
}

Vector pm_one(std::mt19937_64& rng, Index m) {
  Vector v(m);
  for (Index i = 0; i < m; ++i) v(i) = (rng() & 1) ? 1.0 : -1.0;
  return v;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mpc_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Generators, HiddenSolutionsVerify) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const long long m = 1 + static_cast<long long>(seed % 9), k = 1 + static_cast<long long>((seed / 3) % 9);
    ProblemInstance g = gen_gram(m, k, seed);
    EXPECT_TRUE(verify(g, {*g.hidden_X, Matrix()})) << seed;

    ProblemInstance c = gen_cyclic(3 + static_cast<long long>(seed % 30), seed);
    EXPECT_TRUE(verify(c, {*c.hidden_X, *c.hidden_Y})) << seed;

    const long long nm = 6 + static_cast<long long>(seed % 5), nk = 2 + static_cast<long long>(seed % 3);
    ProblemInstance n = gen_nmf_designed(nm, nm + 1, nk, static_cast<double>(nk) / static_cast<double>(nm), seed);
    EXPECT_TRUE(verify(n, {*n.hidden_X, *n.hidden_Y})) << seed;
    EXPECT_EQ(svd(n.C).rank(), nk);
  }
  for (long long d = 1; d <= 5; ++d) {
    ProblemInstance u = udisj(d);
    EXPECT_TRUE(verify(u, {*u.hidden_X, *u.hidden_Y}));
  }
  for (long long m : {1, 2, 4, 8, 16, 32}) {
    ProblemInstance h = gen_hadamard(m);
    EXPECT_TRUE(verify(h, {*h.hidden_X, Matrix()})) << m;
  }
  for (long long m = 3; m <= 12; ++m) {
    ProblemInstance e = edm(m);
    EXPECT_TRUE(verify(e, {Matrix::Identity(m, m), e.C})) << m;
  }
}

TEST(Generators, GramExamples) {
  ProblemInstance one = gen_gram(1, 1, 3);
  EXPECT_EQ(one.C(0, 0), 1.0);
  EXPECT_TRUE(verify(one, {Matrix::Constant(1, 1, -1.0), Matrix()}));
  ProblemInstance two = gen_gram(2, 2, 0);
  two.C = 2.0 * Matrix::Identity(2, 2);
  Matrix X(2, 2);
  X << 1, 1, 1, -1;
  EXPECT_TRUE(verify(two, {X, Matrix()}));
  EXPECT_THROW(gen_gram(0, 2, 1), Error);
}

TEST(Generators, Determinism) {
  EXPECT_TRUE(gen_gram(9, 9, 4).C == gen_gram(9, 9, 4).C);
  EXPECT_FALSE(gen_gram(9, 9, 4).C == gen_gram(9, 9, 5).C);
  EXPECT_TRUE(gen_nmf_designed(10, 10, 4, 0.4, 8).C == gen_nmf_designed(10, 10, 4, 0.4, 8).C);
  EXPECT_TRUE(gen_cyclic(13, 2).C == gen_cyclic(13, 2).C);
}

TEST(Generators, MaxdetCandidate) {
  ProblemInstance p = maxdet_candidate_15();
  ASSERT_EQ(p.C.rows(), 15);
  EXPECT_TRUE(p.C == p.C.transpose());
  for (Index i = 0; i < 15; ++i)
    for (Index j = 0; j < 15; ++j) {
      const double v = p.C(i, j);
      if (i == j) EXPECT_EQ(v, 15.0);
      else if (i / 4 == j / 4) EXPECT_EQ(v, 3.0);
      else EXPECT_EQ(v, -1.0);
    }
  EXPECT_GT(eig_sym(p.C).E.minCoeff(), 0.0);
}

TEST(Generators, Hadamard) {
  EXPECT_THROW(gen_hadamard(6), Error);
  EXPECT_NO_THROW(gen_hadamard(12));
  EXPECT_FALSE(gen_hadamard(12).hidden_X.has_value());
  ProblemInstance h2 = gen_hadamard(2);
  Matrix bad = *h2.hidden_X;
  bad(1, 1) = 1.0;
  EXPECT_FALSE(verify(h2, {bad, Matrix()}));
}

TEST(Generators, HadamardTwelveSolves) {
  ProblemInstance h = gen_hadamard(12);
  SolveConfig cfg = default_config(Family::hadamard);
  cfg.max_iter = 300000;
  cfg.seed = 3;
  RunResult r = run(h, {}, cfg);
  ASSERT_EQ(r.outcome.status, SolveStatus::solved) << r.outcome.iterations;
  EXPECT_TRUE(verify(h, r.candidate));
  Eigen::MatrixXi H = r.candidate.X.cast<int>();
  EXPECT_TRUE(H * H.transpose() == 12 * Eigen::MatrixXi::Identity(12, 12));
}

TEST(Cyclic, ProductExamples) {
  Vector x(3), y(3), want(3);
  x << 1, 1, 0;
  y << 1, 0, 1;
  want << 2, 1, 1;
  EXPECT_TRUE(cyclic_product(x, y) == want);
  Vector delta = Vector::Zero(5);
  delta(0) = 1.0;
  Vector v = Vector::LinSpaced(5, -2, 2);
  EXPECT_TRUE(cyclic_product(delta, v) == v);
  EXPECT_THROW(cyclic_product(x, Vector::Zero(4)), Error);
}

TEST(Cyclic, ProductMatchesCirculantAndFourier) {
  std::mt19937_64 rng(71);
  for (int t = 0; t < 100; ++t) {
    const Index m = 3 + t % 30;
    Vector x = test::random_matrix(rng, m, 1), y = test::random_matrix(rng, m, 1);
    Vector c = cyclic_product(x, y);
    EXPECT_LE((c - circulant_product(x, y)).cwiseAbs().maxCoeff(), 1e-12);
    ComplexVector prod = dft(x).cwiseProduct(dft(y)) * std::sqrt(static_cast<double>(m));
    EXPECT_LE((idft(prod) - c).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Cyclic, C23Instance) {
  ProblemInstance p = c23_instance();
  ASSERT_EQ(p.C.cols(), 23);
  const double want[23] = {1, -3, -3, -3, 1, 1, 1, 1, 1, -3, -3, -3, 1, -3, -3, 1, -3, -3, 1, 1, -3, 1, 1};
  long long sum = 0;
  for (Index i = 0; i < 23; ++i) {
    EXPECT_EQ(p.C(0, i), want[i]);
    EXPECT_TRUE(p.C(0, i) == 1.0 || p.C(0, i) == -3.0);
    sum += std::llround(p.C(0, i));
  }
  // The DC coefficient is (sum x)(sum y), a product of two odd integers.
  EXPECT_NE(sum % 2, 0);
  bool factorable = false;
  for (long long a = -23; a <= 23; a += 2)
    for (long long b = -23; b <= 23; b += 2) factorable |= a * b == sum;
  EXPECT_TRUE(factorable);
}

TEST(Cyclic, VerifierIsIntegerConvolution) {
  ProblemInstance p = gen_cyclic(17, 5);
  EXPECT_TRUE(verify(p, {*p.hidden_X, *p.hidden_Y}));
  // Shifting x one way and y the other preserves the product.
  Matrix xs(1, 17), ys(1, 17);
  for (Index j = 0; j < 17; ++j) {
    xs(0, (j + 1) % 17) = (*p.hidden_X)(0, j);
    ys(0, j) = (*p.hidden_Y)(0, (j + 1) % 17);
  }
  EXPECT_TRUE(verify(p, {xs, ys}));
  Matrix bad = *p.hidden_X;
  bad(0, 3) *= -1.0;
  VerifyResult v = verify(p, {bad, *p.hidden_Y});
  EXPECT_FALSE(v);
  EXPECT_EQ(v.reason, "cyclic product mismatch");
  EXPECT_EQ(verify(p, {Matrix::Ones(1, 16), *p.hidden_Y}).reason, "shape");
}

TEST(Cyclic, FourierProjection) {
  std::mt19937_64 rng(72);
  for (int t = 0; t < 100; ++t) {
    const Index m = 1 + t % 24;
    Vector c = cyclic_product(pm_one(rng, m), pm_one(rng, m));
    CyclicProductConstraint cp(c, t % 3 == 0 ? 0 : 10);
    Vector x = test::random_matrix(rng, m, 1, -2.0, 2.0), y = test::random_matrix(rng, m, 1, -2.0, 2.0);
    auto r = cp.project(x, y);
    EXPECT_LE(r.imag_residue, 1e-10);
    EXPECT_LE((cyclic_product(r.x, r.y) - c).cwiseAbs().maxCoeff(), 1e-8) << "m=" << m;
  }
}

TEST(Cyclic, FourierProjectionFixedPointAndScalarCase) {
  std::mt19937_64 rng(73);
  Vector x = pm_one(rng, 8), y = pm_one(rng, 8);
  Vector c = cyclic_product(x, y);
  auto [xo, yo] = fourier_product_projection(x, y, c, 10);
  EXPECT_LE((xo - x).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((yo - y).cwiseAbs().maxCoeff(), 1e-10);

  Vector a(1), b(1), c1(1);
  a << 2.0;
  b << 1.0;
  c1 << 6.0;
  auto [xs, ys] = fourier_product_projection(a, b, c1, 10);
  ScalarPair s = proj_scalar_product(6.0, {2.0, 1.0}, 10);
  EXPECT_NEAR(xs(0), s.x.real(), 1e-12);
  EXPECT_NEAR(ys(0), s.y.real(), 1e-12);
  EXPECT_THROW(fourier_product_projection(a, Vector::Zero(2), c1, 1), Error);
}

TEST(Nmf, DesignedInstanceShape) {
  ProblemInstance p = gen_nmf_designed(50, 50, 25, 0.5, 1);
  EXPECT_EQ(p.C.rows(), 50);
  EXPECT_EQ(p.C.cols(), 50);
  EXPECT_EQ(svd(p.C).rank(), 25);
  EXPECT_EQ((p.hidden_X->array() == 0.0).count(), 625);
  EXPECT_EQ((p.hidden_Y->array() == 0.0).count(), 625);
  ProblemInstance dense = gen_nmf_designed(10, 10, 4, 0.0, 1);
  EXPECT_EQ((dense.hidden_X->array() == 0.0).count(), 0);
  EXPECT_THROW(gen_nmf_designed(5, 5, 2, 1.0, 1), Error);
}

TEST(Udisj, ShapesAndRanks) {
  ProblemInstance one = udisj(1);
  EXPECT_TRUE(one.C == Matrix::Ones(1, 1));
  ProblemInstance two = udisj(2);
  Matrix X2(4, 3), Y2(3, 4);
  X2 << 1, 1, 1, 0, 1, 0, 1, 0, 0, 0, 0, 1;
  Y2 << 1, 1, 0, 0, 1, 0, 1, 0, 1, 0, 0, 1;
  EXPECT_TRUE(*two.hidden_X == X2);
  EXPECT_TRUE(*two.hidden_Y == Y2);
  long long k = 1, m = 1;
  for (long long d = 1; d <= 4; ++d) {
    ProblemInstance u = udisj(d);
    EXPECT_EQ(u.C.rows(), m);
    EXPECT_EQ(u.C.cols(), m);
    EXPECT_EQ(u.hidden_X->cols(), k);
    EXPECT_EQ(svd(u.C).rank(), k) << d;
    k *= 3;
    m *= 4;
  }
  EXPECT_THROW(udisj(0), Error);
  EXPECT_THROW(udisj(7), Error);
}

TEST(Edm, MatrixAndRank) {
  ProblemInstance e = edm(6);
  Matrix want(6, 6);
  want << 0, 1, 4, 9, 16, 25, 1, 0, 1, 4, 9, 16, 4, 1, 0, 1, 4, 9, 9, 4, 1, 0, 1, 4, 16, 9, 4, 1, 0, 1, 25, 16, 9, 4, 1, 0;
  EXPECT_TRUE(e.C == want);
  for (long long m = 3; m <= 16; ++m) EXPECT_EQ(svd(edm(m).C).rank(), 3) << m;
  EXPECT_THROW(edm(2), Error);
}

TEST(Edm, SpecialInitConstraints) {
  for (auto [m, k] : {std::pair<long long, Index>{6, 5}, {8, 6}, {12, 7}})
    for (double g : {1.0, 0.5}) {
      ProblemInstance e = edm(m);
      ScaledSvdSetup su = setup_scaled_svd(e.C, g, g);
      RankExcessiveState s = edm_special_init(su, k);
      EXPECT_LE(max_abs(Matrix(s.W * s.Z - su.D)), 1e-8);
      EXPECT_LE(max_abs(Matrix(s.XC - su.U * s.W)), 1e-8);
      EXPECT_LE(max_abs(Matrix(s.YC - s.Z * su.V)), 1e-8);
      EXPECT_TRUE(s.XC == s.XCt && s.XP == s.XPt && s.YC == s.YCt && s.YP == s.YPt);
      EXPECT_GE(Matrix(s.XC + s.XP).minCoeff(), -1e-8);
      EXPECT_GE(Matrix(s.YC + s.YP).minCoeff(), -1e-8);
      // Everything holds except orthogonality, which the initial point violates.
      Matrix block = s.XCt * s.YP + s.XP * s.YCt + s.XPt * s.YPt;
      EXPECT_GT(max_abs(block), 1e-3);
      EXPECT_THROW(edm_special_init(su, 2), Error);
    }
}

TEST(Verify, Rejections) {
  ProblemInstance g = gen_gram(5, 5, 2);
  Matrix X = *g.hidden_X;
  X(2, 3) *= -1.0;
  EXPECT_FALSE(verify(g, {X, Matrix()}));
  X(2, 3) = 0.5;
  EXPECT_FALSE(verify(g, {X, Matrix()}));
  EXPECT_EQ(verify(g, {Matrix::Ones(5, 4), Matrix()}).reason, "shape");

  ProblemInstance n = gen_nmf_designed(8, 8, 3, 0.375, 4);
  const double tol = 1e-8;
  Matrix Xn = *n.hidden_X;
  Xn(0, 0) = -10.0 * tol;
  VerifyResult v = verify(n, {Xn, *n.hidden_Y}, tol);
  EXPECT_FALSE(v);
  EXPECT_EQ(v.reason, "negative entry");
  Matrix Xp = *n.hidden_X;
  Xp(1, 1) += 1e-3;
  EXPECT_EQ(verify(n, {Xp, *n.hidden_Y}, tol).reason, "product mismatch");
  EXPECT_EQ(verify(n, {*n.hidden_X, n.hidden_Y->topRows(2)}, tol).reason, "shape");
  Matrix Xi = *n.hidden_X;
  Xi(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(verify(n, {Xi, *n.hidden_Y}, tol));

  ProblemInstance e = edm(4);
  Matrix Y = e.C;
  Y(0, 1) += 1.0;
  EXPECT_FALSE(verify(e, {Matrix::Identity(4, 4), Y}));
  Matrix Xe = Matrix::Identity(4, 4);
  Xe(1, 0) = 1.0;
  EXPECT_FALSE(verify(e, {Xe, e.C}));

  ProblemInstance t = int2d(15);
  EXPECT_TRUE(verify(t, {Matrix::Constant(1, 1, 3.2), Matrix::Constant(1, 1, 4.9)}));
  EXPECT_FALSE(verify(t, {Matrix::Constant(1, 1, 4.0), Matrix::Constant(1, 1, 4.0)}));
}

TEST(Formulation, MethodCompatibility) {
  FormulationOptions opt;
  EXPECT_THROW(make_formulation(gen_gram(3, 3, 1), Method::cyclic, opt), Error);
  EXPECT_THROW(make_formulation(c23_instance(), Method::gram, opt), Error);
  EXPECT_THROW(make_formulation(edm(6), Method::gram, opt), Error);
  opt.k = 2;
  EXPECT_THROW(make_formulation(edm(6), Method::rank_excessive, opt), Error);
  EXPECT_EQ(default_method(Family::edm), Method::rank_excessive);
  EXPECT_EQ(default_method(Family::nmf_designed), Method::rank_limited);
  EXPECT_TRUE(default_special_init(Family::edm));
  EXPECT_FALSE(default_special_init(Family::udisj));
}

TEST(Formulation, DefaultConfigs) {
  EXPECT_EQ(default_config(Family::gram).beta, 0.2);
  EXPECT_EQ(default_config(Family::cyclic).beta, 0.2);
  SolveConfig n = default_config(Family::nmf_designed);
  EXPECT_EQ(n.beta, 0.2);
  EXPECT_EQ(n.g, 1.2);
  EXPECT_EQ(n.T, 10);
  SolveConfig u = default_config(Family::udisj);
  EXPECT_EQ(u.g, 0.8);
  EXPECT_EQ(u.h, 0.8);
  SolveConfig e = default_config(Family::edm);
  EXPECT_EQ(e.beta, 1.0);
  EXPECT_EQ(e.g, 0.5);
}

TEST(Formulation, EdmSmallSolvesFromSpecialInit) {
  ProblemInstance e = edm(6);
  RunOptions ro;
  ro.special_init = true;
  ro.k = 5;
  SolveConfig cfg = default_config(Family::edm);
  cfg.max_iter = 20000;
  RunResult r = run(e, ro, cfg);
  ASSERT_EQ(r.outcome.status, SolveStatus::solved);
  EXPECT_TRUE(verify(e, r.candidate));
}

TEST(Formulation, DenseNmfSolves) {
  ProblemInstance p = gen_nmf_designed(10, 10, 4, 0.0, 3);
  SolveConfig cfg = default_config(Family::nmf_designed);
  cfg.max_iter = 20000;
  RunResult r = run(p, {}, cfg);
  ASSERT_EQ(r.outcome.status, SolveStatus::solved);
  EXPECT_TRUE(verify(p, r.candidate));
}

TEST(Manifest, RoundTrip) {
  const auto dir = temp_dir("manifest");
  for (const ProblemInstance& p : {gen_nmf_designed(7, 6, 3, 0.3, 9), c23_instance(), udisj(2), edm(5), gen_gram(4, 3, 1)}) {
    const auto path = save_instance(dir / to_string(p.family), p);
    ProblemInstance q = load_instance(path);
    EXPECT_EQ(q.family, p.family);
    EXPECT_EQ(q.params.m, p.params.m);
    EXPECT_EQ(q.params.k, p.params.k);
    EXPECT_EQ(q.params.f, p.params.f);
    EXPECT_EQ(q.params.seed, p.params.seed);
    EXPECT_TRUE(q.C == p.C);
    EXPECT_EQ(q.hidden_X.has_value(), p.hidden_X.has_value());
    if (p.hidden_X) EXPECT_TRUE(*q.hidden_X == *p.hidden_X);
    if (p.hidden_Y) EXPECT_TRUE(*q.hidden_Y == *p.hidden_Y);
  }
  EXPECT_THROW(load_instance(dir / "missing.json"), Error);
  std::filesystem::remove_all(dir);
}
