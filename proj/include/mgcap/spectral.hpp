#pragma once

// EIG-based matrix normalization: Y = U g(R) U^T where R is the rectified spectrum
// of the input and g is log, sqrt or identity. The decomposition runs once per
// forward pass; rectification acts on the eigenvalues directly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgcap/error.hpp"
#include "mgcap/linalg.hpp"

namespace mgcap {

enum class NormalizationMode { LogE, SqrtE, Identity };

inline NormalizationMode parse_normalization(const std::string& s) {
  if (s == "log_e") return NormalizationMode::LogE;
  if (s == "sqrt_e") return NormalizationMode::SqrtE;
  if (s == "identity") return NormalizationMode::Identity;
  throw Error(ErrorKind::ConfigError, "normalization must be log_e|sqrt_e|identity, got '" + s + "'");
}

inline std::string to_string(NormalizationMode m) {
  switch (m) {
    case NormalizationMode::LogE: return "log_e";
    case NormalizationMode::SqrtE: return "sqrt_e";
    case NormalizationMode::Identity: return "identity";
  }
  return "?";
}

/// g applied to one rectified eigenvalue.
inline double spectrum_map(NormalizationMode m, double r) {
  switch (m) {
    case NormalizationMode::LogE: return std::log(r);
    case NormalizationMode::SqrtE: return std::sqrt(r);
    case NormalizationMode::Identity: return r;
  }
  return r;
}

/// g' applied to one rectified eigenvalue.
inline double spectrum_map_derivative(NormalizationMode m, double r) {
  switch (m) {
    case NormalizationMode::LogE: return 1.0 / r;
    case NormalizationMode::SqrtE: return 0.5 / std::sqrt(r);
    case NormalizationMode::Identity: return 1.0;
  }
  return 1.0;
}

struct RectifiedSpectrum {
  std::vector<double> values;      // clamp(nu_i, eps_lo, eps_hi)
  double eps_lo = 1e-5;
  double eps_hi = 1e5;
  std::vector<std::uint8_t> mask;  // 1 iff nu_i > eps_lo
};

inline RectifiedSpectrum rectify(const EigSystem& eig, double eps_lo, double eps_hi) {
  if (!(eps_lo > 0.0) || !(eps_hi > eps_lo))
    throw Error(ErrorKind::InvalidArgument, "rectify requires eps_hi > eps_lo > 0");
  RectifiedSpectrum r{{}, eps_lo, eps_hi, {}};
  r.values.reserve(eig.order());
  r.mask.reserve(eig.order());
  for (double nu : eig.values) {
    r.values.push_back(std::clamp(nu, eps_lo, eps_hi));
    r.mask.push_back(nu > eps_lo ? 1 : 0);
  }
  return r;
}

/// Q(i,j) = 1/(nu_i - nu_j) off the diagonal; zero on the diagonal and wherever
/// |nu_i - nu_j| < tol * max(1, |nu_i|, |nu_j|).
struct LoewnerMatrix {
  Matrix q;

  static LoewnerMatrix from_spectrum(std::span<const double> nu, double degeneracy_tol) {
    const std::size_t n = nu.size();
    LoewnerMatrix out{Matrix(n, n)};
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double gap = nu[i] - nu[j];
        const double scale = std::max({1.0, std::abs(nu[i]), std::abs(nu[j])});
        if (std::abs(gap) < degeneracy_tol * scale) continue;
        out.q(i, j) = 1.0 / gap;
      }
    return out;
  }
};

inline constexpr double kDefaultDegeneracyTol = 1e-10;

struct SpectralCache {
  SymMatrix input;
  EigSystem eig;
  RectifiedSpectrum rect;
  NormalizationMode mode = NormalizationMode::SqrtE;

  /// g(R) per eigenvalue.
  std::vector<double> normalized_spectrum() const {
    std::vector<double> out(rect.values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = spectrum_map(mode, rect.values[i]);
    return out;
  }
};

inline std::pair<SymMatrix, SpectralCache> normalize_forward(const SymMatrix& input, NormalizationMode mode,
                                                             double eps_lo = 1e-5, double eps_hi = 1e5) {
  SpectralCache cache{input, sym_eig(input), {}, mode};
  cache.rect = rectify(cache.eig, eps_lo, eps_hi);
  const std::vector<double> g = cache.normalized_spectrum();
  SymMatrix out = reconstruct(cache.eig.vectors, g);
  return {std::move(out), std::move(cache)};
}

/// Gradient w.r.t. the input of normalize_forward.
///
///   dL/dU     = 2 sym(dL/dY) U g(R)
///   dL/dSigma = g'(R) * active * diag(U^T dL/dY U)
///   dL/dX     = sym( U ( Q^T o (U^T dL/dU) + diag(dL/dSigma) ) U^T )
///
/// `active` zeroes eigenvalues clamped at either end of [eps_lo, eps_hi]. Degenerate
/// eigenvalue pairs get Q = 0, so the result is finite for any symmetric input.
inline SymMatrix normalize_backward(const SpectralCache& cache, const Matrix& upstream,
                                    double degeneracy_tol = kDefaultDegeneracyTol) {
  const std::size_t n = cache.eig.order();
  if (upstream.rows() != n || upstream.cols() != n)
    throw Error(ErrorKind::DimensionMismatch, "normalize_backward: upstream order mismatch");

  const auto u = cache.eig.vectors.eigen();
  const std::vector<double> g = cache.normalized_spectrum();

  const Matrix up_sym = sym_part(upstream);
  // M = U^T sym(dL/dY) U
  EigenRowMat m = u.transpose() * up_sym.eigen() * u;

  // U^T dL/dU = 2 M g(R)
  const LoewnerMatrix q = LoewnerMatrix::from_spectrum(cache.eig.values, degeneracy_tol);
  EigenRowMat inner(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const auto ii = static_cast<Eigen::Index>(i);
      const auto jj = static_cast<Eigen::Index>(j);
      inner(ii, jj) = q.q(j, i) * 2.0 * m(ii, jj) * g[j];
    }
  for (std::size_t i = 0; i < n; ++i) {
    const double nu = cache.eig.values[i];
    const bool active = cache.rect.mask[i] != 0 && nu < cache.rect.eps_hi;
    const auto ii = static_cast<Eigen::Index>(i);
    inner(ii, ii) = active ? spectrum_map_derivative(cache.mode, cache.rect.values[i]) * m(ii, ii) : 0.0;
  }

  Matrix out(n, n);
  out.eigen().noalias() = u * inner * u.transpose();
  return SymMatrix::symmetrize(out);
}

}  // namespace mgcap
