#pragma once

// Second-order pooling: covariance of local features, Gaussian embedding of
// (mean, covariance) into one SPD matrix, and a trace-scaled ridge.
//
// Gradient convention throughout: a backward function receives dL/dX with every
// entry of X treated as an independent variable and returns the same for its input.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mgcap/error.hpp"
#include "mgcap/linalg.hpp"

namespace mgcap {

/// Column n is the feature vector at spatial location n; shape channels x locations.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  explicit FeatureMatrix(Matrix data) : data_(std::move(data)) {
    if (data_.rows() < 1 || data_.cols() < 1)
      throw Error(ErrorKind::DimensionMismatch, "feature matrix needs at least one channel and one location");
    data_.check_finite();
  }

  std::size_t channels() const noexcept { return data_.rows(); }
  std::size_t locations() const noexcept { return data_.cols(); }
  const Matrix& matrix() const noexcept { return data_; }
  double operator()(std::size_t c, std::size_t n) const noexcept { return data_(c, n); }

 private:
  Matrix data_;
};

enum class MeanConvention { Mean, Sum };

inline MeanConvention parse_mean_convention(const std::string& s) {
  if (s == "mean") return MeanConvention::Mean;
  if (s == "sum") return MeanConvention::Sum;
  throw Error(ErrorKind::ConfigError, "mean_convention must be mean|sum, got '" + s + "'");
}

inline std::string to_string(MeanConvention m) { return m == MeanConvention::Mean ? "mean" : "sum"; }

struct SopConfig {
  double lambda = 1e-4;
  bool use_gaussian = true;
  MeanConvention mean_convention = MeanConvention::Mean;
};

namespace detail {

inline Matrix centered(const Matrix& f) {
  Matrix out = f;
  const std::size_t n = f.cols();
  for (std::size_t c = 0; c < f.rows(); ++c) {
    double mean = 0.0;
    for (std::size_t k = 0; k < n; ++k) mean += f(c, k);
    mean /= static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) out(c, k) -= mean;
  }
  return out;
}

}  // namespace detail

/// C = F * Ibar * F^T with Ibar = (1/N)(I - (1/N) 1 1^T), i.e. the biased sample covariance.
/// The upper triangle is mirrored so the result is exactly symmetric.
inline SymMatrix covariance(const FeatureMatrix& f) {
  const Matrix fc = detail::centered(f.matrix());
  const std::size_t c = f.channels();
  Matrix out(c, c);
  out.eigen().noalias() = fc.eigen() * fc.eigen().transpose();
  const double inv_n = 1.0 / static_cast<double>(f.locations());
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = i; j < c; ++j) {
      const double v = out(i, j) * inv_n;
      out(i, j) = v;
      out(j, i) = v;
    }
  return SymMatrix::symmetrize(out);
}

/// dL/dF = (dL/dC + dL/dC^T) * F * Ibar.
inline Matrix covariance_backward(const FeatureMatrix& f, const Matrix& upstream) {
  if (upstream.rows() != f.channels() || upstream.cols() != f.channels())
    throw Error(ErrorKind::DimensionMismatch, "covariance_backward: upstream order " + std::to_string(upstream.rows()) +
                                                  " != channels " + std::to_string(f.channels()));
  const Matrix fc = detail::centered(f.matrix());
  Matrix sym2(upstream.rows(), upstream.cols());
  sym2.eigen() = upstream.eigen() + upstream.eigen().transpose();
  Matrix out(f.channels(), f.locations());
  out.eigen().noalias() = sym2.eigen() * fc.eigen();
  const double inv_n = 1.0 / static_cast<double>(f.locations());
  for (double& v : out.values()) v *= inv_n;
  return out;
}

/// Mean (or sum, per convention) of the feature columns.
inline std::vector<double> feature_mean(const FeatureMatrix& f, MeanConvention conv) {
  std::vector<double> mu(f.channels(), 0.0);
  for (std::size_t c = 0; c < f.channels(); ++c) {
    double s = 0.0;
    for (std::size_t k = 0; k < f.locations(); ++k) s += f(c, k);
    mu[c] = conv == MeanConvention::Mean ? s / static_cast<double>(f.locations()) : s;
  }
  return mu;
}

/// [[C + mu mu^T, mu], [mu^T, 1]].
inline SymMatrix gaussian_embed(const SymMatrix& c, std::span<const double> mu) {
  const std::size_t n = c.order();
  if (mu.size() != n)
    throw Error(ErrorKind::DimensionMismatch,
                "gaussian_embed: mean length " + std::to_string(mu.size()) + " != order " + std::to_string(n));
  Matrix g(n + 1, n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) g(i, j) = c(i, j) + mu[i] * mu[j];
    g(i, n) = mu[i];
    g(n, i) = mu[i];
  }
  g(n, n) = 1.0;
  return SymMatrix::symmetrize(g);
}

struct EmbedGrad {
  Matrix d_cov;
  std::vector<double> d_mu;
};

inline EmbedGrad gaussian_embed_backward(const SymMatrix& c, std::span<const double> mu, const Matrix& upstream) {
  const std::size_t n = c.order();
  if (mu.size() != n || upstream.rows() != n + 1 || upstream.cols() != n + 1)
    throw Error(ErrorKind::DimensionMismatch, "gaussian_embed_backward: upstream must have order " + std::to_string(n + 1));
  EmbedGrad out{Matrix(n, n), std::vector<double>(n, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.d_cov(i, j) = 0.5 * (upstream(i, j) + upstream(j, i));
  for (std::size_t i = 0; i < n; ++i) {
    double s = upstream(i, n) + upstream(n, i);
    for (std::size_t j = 0; j < n; ++j) s += (upstream(i, j) + upstream(j, i)) * mu[j];
    out.d_mu[i] = s;
  }
  return out;
}

/// G + lambda * trace(G) * I.
inline SymMatrix trace_ridge(const SymMatrix& g, double lambda) {
  if (lambda < 0.0) throw Error(ErrorKind::InvalidArgument, "trace_ridge: lambda must be >= 0");
  const double shift = lambda * trace(g.matrix());
  Matrix out = g.matrix();
  for (std::size_t i = 0; i < g.order(); ++i) out(i, i) += shift;
  return SymMatrix::symmetrize(out);
}

/// dL/dG = upstream + lambda * trace(upstream) * I.
inline Matrix trace_ridge_backward(const SymMatrix& g, double lambda, const Matrix& upstream) {
  require_same_shape(g.matrix(), upstream, "trace_ridge_backward");
  const double shift = lambda * trace(upstream);
  Matrix out = upstream;
  for (std::size_t i = 0; i < out.rows(); ++i) out(i, i) += shift;
  return out;
}

/// Intermediates of one pooling pass, consumed by sop_backward.
struct SopCache {
  FeatureMatrix features;
  SymMatrix cov;
  std::vector<double> mu;
  SymMatrix embedded;  // pre-ridge matrix
};

/// F -> covariance -> (optional) Gaussian embedding -> trace ridge.
inline SymMatrix sop_forward(const FeatureMatrix& f, const SopConfig& cfg, SopCache* cache = nullptr) {
  SymMatrix cov = covariance(f);
  std::vector<double> mu;
  SymMatrix embedded;
  if (cfg.use_gaussian) {
    mu = feature_mean(f, cfg.mean_convention);
    embedded = gaussian_embed(cov, mu);
  } else {
    embedded = cov;
  }
  SymMatrix out = trace_ridge(embedded, cfg.lambda);
  if (cache) *cache = SopCache{f, std::move(cov), std::move(mu), std::move(embedded)};
  return out;
}

inline Matrix sop_backward(const SopCache& cache, const SopConfig& cfg, const Matrix& upstream) {
  const Matrix d_embedded = trace_ridge_backward(cache.embedded, cfg.lambda, upstream);
  if (!cfg.use_gaussian) return covariance_backward(cache.features, d_embedded);

  const EmbedGrad eg = gaussian_embed_backward(cache.cov, cache.mu, d_embedded);
  Matrix d_f = covariance_backward(cache.features, eg.d_cov);
  const double w = cfg.mean_convention == MeanConvention::Mean
                       ? 1.0 / static_cast<double>(cache.features.locations())
                       : 1.0;
  for (std::size_t c = 0; c < d_f.rows(); ++c)
    for (std::size_t k = 0; k < d_f.cols(); ++k) d_f(c, k) += w * eg.d_mu[c];
  return d_f;
}

}  // namespace mgcap
