#include <gtest/gtest.h>

#include "mgcap/gradcheck.hpp"
#include "mgcap/sop.hpp"

using namespace mgcap;

namespace {

// Sum over locations of (f_n - mean)(f_n - mean)^T / N, written out longhand.
Matrix covariance_oracle(const Matrix& f) {
  const std::size_t c = f.rows(), n = f.cols();
  std::vector<double> mean(c, 0.0);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t k = 0; k < n; ++k) mean[i] += f(i, k) / static_cast<double>(n);
  Matrix out(c, c);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j)
        out(i, j) += (f(i, k) - mean[i]) * (f(j, k) - mean[j]) / static_cast<double>(n);
  return out;
}

void expect_near(const Matrix& a, const Matrix& b, double tol) {
  ASSERT_EQ(a.rows(), b.rows());
  ASSERT_EQ(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a.values()[k], b.values()[k], tol) << "entry " << k;
}

}  // namespace

TEST(Covariance, WorkedExample) {
  const FeatureMatrix f(Matrix{{1, 2}, {3, 4}});
  expect_near(covariance(f), Matrix{{0.25, 0.25}, {0.25, 0.25}}, 1e-15);
}

TEST(Covariance, MatchesOracleOnRandomInputs) {
  Rng rng = make_rng({11});
  for (int t = 0; t < 50; ++t) {
    const Matrix f = random_matrix(rng, 1 + uniform_index(rng, 6), 1 + uniform_index(rng, 20));
    expect_near(covariance(FeatureMatrix(f)), covariance_oracle(f), 1e-12);
  }
}

TEST(Covariance, ConstantColumnsGiveZero) {
  const FeatureMatrix f(Matrix{{3, 3, 3}, {-1, -1, -1}});
  EXPECT_EQ(max_abs(covariance(f)), 0.0);
}

TEST(Covariance, PsdOnRandomDraws) {
  Rng rng = make_rng({12});
  for (int t = 0; t < 1000; ++t) {
    const Matrix f = random_matrix(rng, 2 + uniform_index(rng, 5), 1 + uniform_index(rng, 8));
    const EigSystem e = sym_eig(covariance(FeatureMatrix(f)));
    EXPECT_GE(e.values.back(), -1e-10);
  }
}

TEST(CovarianceBackward, WorkedExample) {
  const FeatureMatrix f(Matrix{{1, 2}, {3, 4}});
  expect_near(covariance_backward(f, Matrix::identity(2)), Matrix{{-0.5, 0.5}, {-0.5, 0.5}}, 1e-15);
  EXPECT_EQ(max_abs(covariance_backward(f, Matrix(2, 2))), 0.0);
}

// Centering annihilates constant shifts, so gradient rows sum to zero.
TEST(CovarianceBackward, RowsSumToZero) {
  Rng rng = make_rng({13});
  const FeatureMatrix f(Matrix{{2, 2, 2, 2}, {1, 1, 1, 1}, {0, 5, 0, 5}});
  const Matrix g = covariance_backward(f, random_symmetric(rng, 3));
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < 4; ++k) s += g(i, k);
    EXPECT_NEAR(s, 0.0, 1e-12);
  }
}

TEST(CovarianceBackward, ShapeErrors) {
  const FeatureMatrix f(Matrix{{1, 2}, {3, 4}});
  try {
    covariance_backward(f, Matrix::identity(3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimensionMismatch);
  }
}

TEST(GaussianEmbed, WorkedExample) {
  const SymMatrix c{{0.25, 0.25}, {0.25, 0.25}};
  const std::vector<double> mu{1.5, 3.5};
  expect_near(gaussian_embed(c, mu), Matrix{{2.5, 5.5, 1.5}, {5.5, 12.5, 3.5}, {1.5, 3.5, 1.0}}, 1e-15);
  // mean of the columns of [[1,2],[3,4]] is exactly that mu
  EXPECT_EQ(feature_mean(FeatureMatrix(Matrix{{1, 2}, {3, 4}}), MeanConvention::Mean), mu);
  EXPECT_EQ(feature_mean(FeatureMatrix(Matrix{{1, 2}, {3, 4}}), MeanConvention::Sum), (std::vector<double>{3, 7}));
}

TEST(GaussianEmbed, ZeroInputsAndCorner) {
  const SymMatrix g = gaussian_embed(SymMatrix::zeros(3), std::vector<double>(3, 0.0));
  Matrix expect(4, 4);
  expect(3, 3) = 1.0;
  EXPECT_EQ(g.matrix(), expect);

  Rng rng = make_rng({14});
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 6);
    std::vector<double> mu(n);
    for (double& v : mu) v = 100 * normal(rng);
    EXPECT_EQ(gaussian_embed(random_symmetric(rng, n), mu)(n, n), 1.0);
  }
}

TEST(GaussianEmbedBackward, Examples) {
  const SymMatrix c{{0.25, 0.25}, {0.25, 0.25}};
  const EmbedGrad zero = gaussian_embed_backward(c, std::vector<double>{1.5, 3.5}, Matrix(3, 3));
  EXPECT_EQ(max_abs(zero.d_cov), 0.0);
  EXPECT_EQ(zero.d_mu, (std::vector<double>{0, 0}));

  const EmbedGrad g = gaussian_embed_backward(c, std::vector<double>{0, 0}, Matrix::identity(3));
  expect_near(g.d_cov, Matrix::identity(2), 0.0);
  EXPECT_EQ(g.d_mu, (std::vector<double>{0, 0}));

  // Unit weight on the border cell (0, 2) and its mirror: each contributes 1 to dmu_0.
  Matrix u(3, 3);
  u(0, 2) = 1.0;
  u(2, 0) = 1.0;
  const EmbedGrad b = gaussian_embed_backward(c, std::vector<double>{0, 0}, u);
  EXPECT_DOUBLE_EQ(b.d_mu[0], 2.0);
  EXPECT_DOUBLE_EQ(b.d_mu[1], 0.0);
}

TEST(TraceRidge, WorkedExample) {
  const SymMatrix g{{2.5, 5.5, 1.5}, {5.5, 12.5, 3.5}, {1.5, 3.5, 1.0}};
  const SymMatrix r = trace_ridge(g, 1e-4);
  EXPECT_NEAR(r(0, 0), 2.5016, 1e-12);
  EXPECT_NEAR(r(1, 1), 12.5016, 1e-12);
  EXPECT_NEAR(r(2, 2), 1.0016, 1e-12);
  EXPECT_EQ(r(0, 1), 5.5);
  EXPECT_EQ(r(1, 2), 3.5);
  EXPECT_EQ(trace_ridge(g, 0.0), g);
  EXPECT_THROW(trace_ridge(g, -1.0), Error);
}

TEST(TraceRidgeBackward, Examples) {
  const SymMatrix g = SymMatrix::identity(3);
  const Matrix d = trace_ridge_backward(g, 1e-4, Matrix::identity(3));
  expect_near(d, scale(Matrix::identity(3), 1 + 3e-4), 1e-15);

  Rng rng = make_rng({15});
  const Matrix up = random_matrix(rng, 3, 3);
  EXPECT_EQ(trace_ridge_backward(g, 0.0, up), up);
  Matrix traceless = up;
  traceless(2, 2) = -(up(0, 0) + up(1, 1));
  expect_near(trace_ridge_backward(g, 0.3, traceless), traceless, 1e-15);
}

// Ridge lifts the bottom of the spectrum by at least lambda * trace.
TEST(TraceRidge, MinEigenvalueBound) {
  Rng rng = make_rng({16});
  const double lambda = 1e-4;
  for (int t = 0; t < 200; ++t) {
    const FeatureMatrix f(random_matrix(rng, 2 + uniform_index(rng, 6), 2 + uniform_index(rng, 6)));
    const SymMatrix g = gaussian_embed(covariance(f), feature_mean(f, MeanConvention::Mean));
    const SymMatrix r = trace_ridge(g, lambda);
    EXPECT_GE(sym_eig(r).values.back(), lambda * trace(g) - 1e-10);
  }
}

TEST(SopPipeline, ForwardMatchesComposition) {
  Rng rng = make_rng({17});
  const FeatureMatrix f(random_matrix(rng, 4, 9));
  const SopConfig cfg;
  const SymMatrix direct =
      trace_ridge(gaussian_embed(covariance(f), feature_mean(f, cfg.mean_convention)), cfg.lambda);
  EXPECT_EQ(sop_forward(f, cfg), direct);

  const SopConfig plain{0.0, false, MeanConvention::Mean};
  EXPECT_EQ(sop_forward(f, plain), covariance(f));
}

// The composed backward against central differences, for both mean conventions.
TEST(SopPipeline, BackwardMatchesFiniteDifferences) {
  Rng rng = make_rng({18});
  for (const MeanConvention conv : {MeanConvention::Mean, MeanConvention::Sum}) {
    for (int t = 0; t < 20; ++t) {
      const Matrix f = random_matrix(rng, 3, 5);
      const SopConfig cfg{1e-2, true, conv};
      const Matrix w = random_matrix(rng, 4, 4);
      SopCache cache;
      sop_forward(FeatureMatrix(f), cfg, &cache);
      const Matrix g = sop_backward(cache, cfg, w);
      std::vector<double> a, n;
      for (std::size_t k = 0; k < f.size(); ++k) {
        Matrix p = f, m = f;
        p.values()[k] += kFdStep;
        m.values()[k] -= kFdStep;
        n.push_back((frobenius_dot(w, sop_forward(FeatureMatrix(p), cfg)) -
                     frobenius_dot(w, sop_forward(FeatureMatrix(m), cfg))) /
                    (2 * kFdStep));
        a.push_back(g.values()[k]);
      }
      EXPECT_LE(relative_error(a, n), 1e-5);
    }
  }
}

TEST(SopGradcheck, ClosedFormScopes) {
  for (const char* scope : {"covariance", "gaussian", "ridge"}) {
    const GradcheckResult r = GradChecker(scope, 3).run(100);
    EXPECT_TRUE(r.passed()) << scope << " worst " << r.worst_rel_error;
    EXPECT_LE(r.worst_rel_error, 1e-5);
  }
}
