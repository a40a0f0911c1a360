#include <gtest/gtest.h>

#include <cmath>

#include "mgcap/gradcheck.hpp"
#include "mgcap/spectral.hpp"

using namespace mgcap;

namespace {

EigSystem diag_system(std::vector<double> nu) {
  return EigSystem{Matrix::identity(nu.size()), std::move(nu)};
}

// exp(A) by scaling and squaring around a 20-term Taylor series.
Matrix expm_oracle(const Matrix& a) {
  const double norm = frobenius_norm(a);
  int squarings = 0;
  while (norm / std::pow(2.0, squarings) > 0.5) ++squarings;
  const Matrix s = scale(a, std::pow(2.0, -squarings));
  Matrix term = Matrix::identity(a.rows()), sum = Matrix::identity(a.rows());
  for (int k = 1; k <= 20; ++k) {
    term = scale(matmul(term, s), 1.0 / k);
    sum = add(sum, term);
  }
  for (int k = 0; k < squarings; ++k) sum = matmul(sum, sum);
  return sum;
}

double rel_frobenius(const Matrix& a, const Matrix& b) { return frobenius_norm(subtract(a, b)) / frobenius_norm(b); }

}  // namespace

TEST(Rectify, Examples) {
  const RectifiedSpectrum a = rectify(diag_system({2, 1e-7}), 1e-5, 1e5);
  EXPECT_EQ(a.values, (std::vector<double>{2, 1e-5}));
  EXPECT_EQ(a.mask, (std::vector<std::uint8_t>{1, 0}));

  const RectifiedSpectrum b = rectify(diag_system({3, 1}), 1e-5, 1e5);
  EXPECT_EQ(b.values, (std::vector<double>{3, 1}));
  EXPECT_EQ(b.mask, (std::vector<std::uint8_t>{1, 1}));

  // An indefinite maxout output: the negative eigenvalue is forced up to eps.
  const EigSystem e = sym_eig(SymMatrix{{0.2, 0}, {0, -0.5}});
  const RectifiedSpectrum c = rectify(e, 1e-5, 1e5);
  EXPECT_EQ(c.values, (std::vector<double>{0.2, 1e-5}));
  EXPECT_EQ(c.mask, (std::vector<std::uint8_t>{1, 0}));

  EXPECT_EQ(rectify(diag_system({1e7}), 1e-5, 1e5).values[0], 1e5);
  EXPECT_THROW(rectify(diag_system({1}), 1.0, 0.5), Error);
}

TEST(NormalizeForward, Identity) {
  EXPECT_EQ(max_abs(normalize_forward(SymMatrix::identity(5), NormalizationMode::LogE).first), 0.0);
  const SymMatrix s = normalize_forward(SymMatrix::identity(5), NormalizationMode::SqrtE).first;
  EXPECT_LE(max_abs(subtract(s, Matrix::identity(5))), 1e-15);
}

TEST(NormalizeForward, TwoByTwoClosedForms) {
  const SymMatrix x{{2, 1}, {1, 2}};
  // log: eigenvalues 3 and 1 along (1,1)/sqrt2 and (1,-1)/sqrt2 -> every entry is log(3)/2.
  const SymMatrix l = normalize_forward(x, NormalizationMode::LogE).first;
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(l.matrix().values()[k], std::log(3.0) / 2, 1e-12);
  EXPECT_NEAR(std::log(3.0) / 2, 0.54931, 1e-5);
  EXPECT_LE(rel_frobenius(expm_oracle(l), x), 1e-12);

  const SymMatrix s = normalize_forward(x, NormalizationMode::SqrtE).first;
  EXPECT_NEAR(s(0, 0), 1.36603, 1e-5);
  EXPECT_NEAR(s(0, 1), 0.36603, 1e-5);
  EXPECT_LE(max_abs(subtract(matmul(s, s), x)), 1e-10);

  EXPECT_LE(max_abs(subtract(normalize_forward(x, NormalizationMode::Identity).first, x)), 1e-14);
}

TEST(NormalizeForward, ExactnessOracles) {
  Rng rng = make_rng({21});
  for (std::size_t n : {3u, 8u, 33u}) {
    for (int t = 0; t < 10; ++t) {
      const SymMatrix x = random_spd(rng, n, 1e-3, 1e3);
      const SymMatrix s = normalize_forward(x, NormalizationMode::SqrtE).first;
      EXPECT_LE(rel_frobenius(matmul(s, s), x), 1e-8);
      const SymMatrix l = normalize_forward(x, NormalizationMode::LogE).first;
      EXPECT_LE(rel_frobenius(expm_oracle(l), x), 1e-6);
    }
  }
}

TEST(Loewner, TwoByTwo) {
  const EigSystem e = sym_eig(SymMatrix{{2, 1}, {1, 2}});
  const LoewnerMatrix q = LoewnerMatrix::from_spectrum(e.values, kDefaultDegeneracyTol);
  EXPECT_EQ(q.q, (Matrix{{0, 0.5}, {-0.5, 0}}));
}

TEST(Loewner, DegeneratePairsZeroed) {
  const std::vector<double> nu{1e6 + 1e-5, 1e6, 3, 3};
  const LoewnerMatrix q = LoewnerMatrix::from_spectrum(nu, kDefaultDegeneracyTol);
  EXPECT_EQ(q.q(0, 1), 0.0);  // gap 1e-5 below 1e-10 * 1e6
  EXPECT_EQ(q.q(2, 3), 0.0);
  EXPECT_NE(q.q(0, 2), 0.0);
}

TEST(NormalizeBackward, IdentityModePassesUpstream) {
  Rng rng = make_rng({22});
  const SymMatrix x = random_spd(rng, 6, 0.1, 10);
  const Matrix up = random_matrix(rng, 6, 6);
  const auto [y, cache] = normalize_forward(x, NormalizationMode::Identity);
  EXPECT_LE(max_abs(subtract(normalize_backward(cache, up), sym_part(up))), 1e-12);
}

// d trace(sqrt(G)) / dG at G = 2I is (1 / (2 sqrt 2)) I, despite the full degeneracy.
TEST(NormalizeBackward, FullyDegenerateSqrt) {
  const auto [y, cache] = normalize_forward(SymMatrix::symmetrize(scale(Matrix::identity(4), 2.0)), NormalizationMode::SqrtE);
  const SymMatrix g = normalize_backward(cache, Matrix::identity(4));
  EXPECT_TRUE(g.matrix().all_finite());
  EXPECT_LE(max_abs(subtract(g, scale(Matrix::identity(4), 1 / (2 * std::sqrt(2.0))))), 1e-6);

  // Finite-difference oracle of the scalar function along the same direction.
  auto f = [](double s) {
    return trace(normalize_forward(SymMatrix::symmetrize(scale(Matrix::identity(4), s)), NormalizationMode::SqrtE).first);
  };
  const double fd = (f(2 + 1e-6) - f(2 - 1e-6)) / 2e-6 / 4;
  EXPECT_NEAR(fd, 1 / (2 * std::sqrt(2.0)), 1e-6);
}

TEST(NormalizeBackward, FiniteOnDegenerateAndRankDeficient) {
  Rng rng = make_rng({23});
  for (const auto mode : {NormalizationMode::LogE, NormalizationMode::SqrtE, NormalizationMode::Identity}) {
    for (double lambda : {1e-4, 1.0, 1e3}) {
      const auto [y, cache] = normalize_forward(SymMatrix::symmetrize(scale(Matrix::identity(5), lambda)), mode);
      EXPECT_TRUE(normalize_backward(cache, random_matrix(rng, 5, 5)).matrix().all_finite());
    }
    // rank one plus a tiny ridge, and an outright singular matrix
    const Matrix v = random_matrix(rng, 6, 1);
    const SymMatrix r1 = SymMatrix::symmetrize(matmul(v, transpose(v)));
    for (const SymMatrix& x : {r1, trace_ridge(r1, 1e-4), SymMatrix::zeros(6)}) {
      const auto [y, cache] = normalize_forward(x, mode);
      EXPECT_TRUE(normalize_backward(cache, random_matrix(rng, 6, 6)).matrix().all_finite());
    }
  }
}

// Eigenvalues clamped at eps contribute nothing along their own direction.
TEST(NormalizeBackward, ClampedDirectionHasZeroDerivative) {
  Rng rng = make_rng({24});
  const EigSystem basis = sym_eig(random_symmetric(rng, 4));
  const SymMatrix x = reconstruct(basis.vectors, std::vector<double>{3, 2, 1, 1e-7});
  const auto [y, cache] = normalize_forward(x, NormalizationMode::LogE);
  const SymMatrix g = normalize_backward(cache, random_matrix(rng, 4, 4));
  Matrix dir(4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) dir(i, j) = cache.eig.vectors(i, 3) * cache.eig.vectors(j, 3);
  EXPECT_NEAR(frobenius_dot(g, dir), 0.0, 1e-9);
}

// d trace(W Y) / dX against central differences for every mode and several orders.
TEST(NormalizeBackward, MatchesFiniteDifferences) {
  Rng rng = make_rng({25});
  for (const auto mode : {NormalizationMode::LogE, NormalizationMode::SqrtE, NormalizationMode::Identity}) {
    for (std::size_t n : {3u, 8u, 33u}) {
      SymMatrix x;
      do x = random_spd(rng, n, 0.1, 10.0);
      while (relative_eigengap(sym_eig(x).values) < 1e-3);
      const Matrix w = random_matrix(rng, n, n);
      const auto [y, cache] = normalize_forward(x, mode);
      const SymMatrix g = normalize_backward(cache, w);
      std::vector<double> a, num;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
          Matrix p = x.matrix(), m = x.matrix();
          p(i, j) += kFdStep;
          m(i, j) -= kFdStep;
          if (i != j) {
            p(j, i) += kFdStep;
            m(j, i) -= kFdStep;
          }
          num.push_back((frobenius_dot(w, normalize_forward(SymMatrix(p), mode).first) -
                         frobenius_dot(w, normalize_forward(SymMatrix(m), mode).first)) /
                        (2 * kFdStep));
          a.push_back(i == j ? g(i, i) : 2 * g(i, j));
        }
      EXPECT_LE(relative_error(a, num), 1e-5) << to_string(mode) << " order " << n;
    }
  }
}

TEST(SpectralGradcheck, Scopes) {
  for (const char* scope : {"spectral_log", "spectral_sqrt"}) {
    const GradcheckResult r = GradChecker(scope, 5).run(100);
    EXPECT_TRUE(r.passed()) << scope << " worst " << r.worst_rel_error;
    const GradcheckResult d = GradChecker(scope, 5).run_degenerate(30);
    EXPECT_TRUE(d.passed()) << scope << " degenerate worst " << d.worst_rel_error;
  }
}

TEST(Normalization, Parse) {
  EXPECT_EQ(parse_normalization("log_e"), NormalizationMode::LogE);
  EXPECT_EQ(parse_normalization("sqrt_e"), NormalizationMode::SqrtE);
  EXPECT_EQ(parse_normalization("identity"), NormalizationMode::Identity);
  EXPECT_THROW(parse_normalization("sqrt"), Error);
}
