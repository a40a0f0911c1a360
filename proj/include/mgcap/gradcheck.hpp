#pragma once

// Finite-difference verification of every backward pass.
//
// Each trial draws a random input and a random linear read-out W, sets L = <W, layer(x)>
// (or the classification loss for `full`), and compares the analytic gradient with
// central differences, step 1e-5 (smaller for the composite scopes when the input sits
// close to a kink). Symmetric inputs are perturbed in (i,j)/(j,i) pairs,
// so the oracle for an off-diagonal pair is grad(i,j) + grad(j,i).
//
// Trials whose input sits too close to a non-differentiable point (maxout tie, ReLU or
// pooling switch, eigenvalue crossing or clamp) are redrawn; the redraw count is reported.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mgcap/backbone.hpp"
#include "mgcap/canonical.hpp"
#include "mgcap/error.hpp"
#include "mgcap/head.hpp"
#include "mgcap/linalg.hpp"
#include "mgcap/model.hpp"
#include "mgcap/rng.hpp"
#include "mgcap/sop.hpp"
#include "mgcap/spectral.hpp"

namespace mgcap {

inline const std::vector<std::string>& gradcheck_scopes() {
  static const std::vector<std::string> s{"covariance",    "gaussian", "ridge",    "spectral_log",
                                          "spectral_sqrt", "maxout",   "backbone", "full"};
  return s;
}

/// 1e-5 for the closed-form layers, 1e-4 where an eigensolver or a network is involved.
inline double gradcheck_tolerance(const std::string& scope) {
  if (scope == "covariance" || scope == "gaussian" || scope == "ridge" || scope == "maxout") return 1e-5;
  return 1e-4;
}

struct GradcheckResult {
  std::string scope;
  std::size_t trials = 0;
  double worst_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t redraws = 0;
  bool all_finite = true;
  bool degenerate = false;

  bool passed() const { return all_finite && worst_rel_error <= tolerance; }
};

inline constexpr double kFdStep = 1e-5;

/// ||a - n|| / max(||a||, ||n||), with a floor so all-zero gradients compare as equal.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    diff += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
    na += analytic[k] * analytic[k];
    nn += numeric[k] * numeric[k];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
}

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = scale * normal(rng);
  return m;
}

inline SymMatrix random_symmetric(Rng& rng, std::size_t n, double scale = 1.0) {
  return SymMatrix::symmetrize(random_matrix(rng, n, n, scale));
}

/// U diag(nu) U^T with a random orthogonal U and log-uniform spectrum in [lo, hi].
inline SymMatrix random_spd(Rng& rng, std::size_t n, double lo, double hi) {
  const EigSystem basis = sym_eig(random_symmetric(rng, n));
  std::vector<double> nu(n);
  for (double& v : nu) v = std::exp(uniform(rng, std::log(lo), std::log(hi)));
  return reconstruct(basis.vectors, nu);
}

/// Smallest |nu_i - nu_j| / max(1, |nu_i|, |nu_j|) over sorted neighbours.
inline double relative_eigengap(const std::vector<double>& nu) {
  double g = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < nu.size(); ++i)
    g = std::min(g, std::abs(nu[i - 1] - nu[i]) / std::max({1.0, std::abs(nu[i - 1]), std::abs(nu[i])}));
  return g;
}

namespace detail {

/// Central differences over symmetric pairs (i <= j); returns {analytic, numeric}.
inline std::pair<std::vector<double>, std::vector<double>> compare_symmetric(
    const SymMatrix& x, const Matrix& grad, const std::function<double(const SymMatrix&)>& loss) {
  std::vector<double> a, num;
  const std::size_t n = x.order();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      Matrix plus = x.matrix(), minus = x.matrix();
      plus(i, j) += kFdStep;
      minus(i, j) -= kFdStep;
      if (i != j) {
        plus(j, i) += kFdStep;
        minus(j, i) -= kFdStep;
      }
      num.push_back((loss(SymMatrix(plus)) - loss(SymMatrix(minus))) / (2 * kFdStep));
      a.push_back(i == j ? grad(i, i) : grad(i, j) + grad(j, i));
    }
  return {a, num};
}

inline std::pair<std::vector<double>, std::vector<double>> compare_dense(
    const Matrix& x, const Matrix& grad, const std::function<double(const Matrix&)>& loss, double h = kFdStep) {
  std::vector<double> a, num;
  for (std::size_t k = 0; k < x.size(); ++k) {
    Matrix plus = x, minus = x;
    plus.values()[k] += h;
    minus.values()[k] -= h;
    num.push_back((loss(plus) - loss(minus)) / (2 * h));
    a.push_back(grad.values()[k]);
  }
  return {a, num};
}

inline bool finite_all(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Up to `per_tensor` coordinates of each tensor, drawn without replacement.
inline std::vector<std::pair<std::size_t, std::size_t>> sample_coordinates(const std::vector<Tensor>& tensors,
                                                                          std::size_t per_tensor, Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    std::vector<std::size_t> idx(tensors[t].size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    const std::size_t take = std::min(per_tensor, idx.size());
    for (std::size_t k = 0; k < take; ++k) {
      std::swap(idx[k], idx[k + uniform_index(rng, idx.size() - k)]);
      out.emplace_back(t, idx[k]);
    }
  }
  return out;
}

/// Step for composite scopes: small enough that no perturbation crosses the nearest kink.
inline double step_for_margin(double margin) { return std::min(kFdStep, margin / 100.0); }

/// Central difference of `loss` in one scalar parameter.
template <class Loss>
double central_difference(double& p, double h, Loss&& loss) {
  const double saved = p;
  p = saved + h;
  const double lp = loss();
  p = saved - h;
  const double lm = loss();
  p = saved;
  return (lp - lm) / (2 * h);
}

}  // namespace detail

class GradChecker {
 public:
  GradChecker(std::string scope, std::uint64_t seed) : scope_(std::move(scope)), seed_(seed) {
    if (std::find(gradcheck_scopes().begin(), gradcheck_scopes().end(), scope_) == gradcheck_scopes().end()) {
      std::string valid;
      for (const auto& s : gradcheck_scopes()) valid += (valid.empty() ? "" : ", ") + s;
      throw Error(ErrorKind::InvalidArgument, "unknown scope '" + scope_ + "' (valid: " + valid + ")");
    }
  }

  GradcheckResult run(std::size_t trials) {
    GradcheckResult r;
    r.scope = scope_;
    r.trials = trials;
    r.tolerance = gradcheck_tolerance(scope_);
    for (std::size_t t = 0; t < trials; ++t) {
      Rng rng = make_rng({seed_, 0x6c4eu, t});
      for (int attempt = 0;; ++attempt) {
        if (attempt == 200) throw Error(ErrorKind::InvalidArgument, "could not draw a smooth trial for " + scope_);
        std::vector<double> a, n;
        if (!trial(rng, t, a, n)) {
          ++r.redraws;
          continue;
        }
        r.all_finite = r.all_finite && detail::finite_all(a) && detail::finite_all(n);
        r.worst_rel_error = std::max(r.worst_rel_error, relative_error(a, n));
        break;
      }
    }
    return r;
  }

  /// Degenerate-spectrum suite for the spectral scopes: scaled identities and
  /// rank-one-plus-ridge inputs. A random read-out must give finite gradients
  /// (coincident eigenvalues have their Loewner terms zeroed); the trace read-out,
  /// which that rule leaves exact, is also checked against finite differences.
  GradcheckResult run_degenerate(std::size_t trials) {
    if (scope_ != "spectral_log" && scope_ != "spectral_sqrt")
      throw Error(ErrorKind::InvalidArgument, "--degenerate applies to spectral_log and spectral_sqrt only");
    const NormalizationMode mode = scope_ == "spectral_log" ? NormalizationMode::LogE : NormalizationMode::SqrtE;
    GradcheckResult r;
    r.scope = scope_;
    r.trials = trials;
    r.tolerance = gradcheck_tolerance(scope_);
    r.degenerate = true;
    const double scales[] = {1e-4, 1.0, 1e3};
    for (std::size_t t = 0; t < trials; ++t) {
      Rng rng = make_rng({seed_, 0xde9u, t});
      const std::size_t n = 2 + t % 7;
      SymMatrix x;
      if (t % 2 == 0) {
        x = SymMatrix::symmetrize(scale(Matrix::identity(n), scales[(t / 2) % 3]));
      } else {
        std::vector<double> v(n);
        for (double& e : v) e = normal(rng);
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) m(i, j) = v[i] * v[j];
        x = trace_ridge(SymMatrix::symmetrize(m), 1e-4);
      }
      const Matrix w = random_matrix(rng, n, n);
      const auto [y, cache] = normalize_forward(x, mode);
      const SymMatrix g = normalize_backward(cache, w);
      r.all_finite = r.all_finite && g.matrix().all_finite();

      // Trace read-out: d tr f(X) = f'(X), exact even at coincident eigenvalues. Only
      // compared where the smallest eigenvalue keeps central differences accurate.
      if (cache.eig.values.back() < 0.5) continue;
      const SymMatrix gi = normalize_backward(cache, Matrix::identity(n));
      auto loss = [&](const SymMatrix& s) { return trace(normalize_forward(s, mode).first.matrix()); };
      const auto [a, num] = detail::compare_symmetric(x, gi.matrix(), loss);
      r.all_finite = r.all_finite && detail::finite_all(a) && detail::finite_all(num);
      r.worst_rel_error = std::max(r.worst_rel_error, relative_error(a, num));
    }
    return r;
  }

 private:
  bool trial(Rng& rng, std::size_t t, std::vector<double>& a, std::vector<double>& n) {
    if (scope_ == "covariance") return covariance_trial(rng, a, n);
    if (scope_ == "gaussian") return gaussian_trial(rng, a, n);
    if (scope_ == "ridge") return ridge_trial(rng, a, n);
    if (scope_ == "spectral_log") return spectral_trial(rng, t, NormalizationMode::LogE, a, n);
    if (scope_ == "spectral_sqrt") return spectral_trial(rng, t, NormalizationMode::SqrtE, a, n);
    if (scope_ == "maxout") return maxout_trial(rng, a, n);
    if (scope_ == "backbone") return backbone_trial(rng, a, n);
    return full_trial(rng, a, n);
  }

  static void append(std::pair<std::vector<double>, std::vector<double>> p, std::vector<double>& a,
                     std::vector<double>& n) {
    a.insert(a.end(), p.first.begin(), p.first.end());
    n.insert(n.end(), p.second.begin(), p.second.end());
  }

  bool covariance_trial(Rng& rng, std::vector<double>& a, std::vector<double>& n) {
    const std::size_t c = 2 + uniform_index(rng, 5), locs = 2 + uniform_index(rng, 9);
    const Matrix f = random_matrix(rng, c, locs);
    const Matrix w = random_matrix(rng, c, c);
    const Matrix g = covariance_backward(FeatureMatrix(f), w);
    append(detail::compare_dense(f, g, [&](const Matrix& x) {
             return frobenius_dot(w, covariance(FeatureMatrix(x)).matrix());
           }),
           a, n);
    return true;
  }

  bool gaussian_trial(Rng& rng, std::vector<double>& a, std::vector<double>& n) {
    const std::size_t c = 1 + uniform_index(rng, 6);
    const SymMatrix cov = random_symmetric(rng, c);
    std::vector<double> mu(c);
    for (double& v : mu) v = normal(rng);
    const Matrix w = random_matrix(rng, c + 1, c + 1);
    const EmbedGrad g = gaussian_embed_backward(cov, mu, w);
    append(detail::compare_symmetric(
               cov, g.d_cov, [&](const SymMatrix& x) { return frobenius_dot(w, gaussian_embed(x, mu).matrix()); }),
           a, n);
    const Matrix mu_m(1, c, mu);
    append(detail::compare_dense(mu_m, Matrix(1, c, g.d_mu),
                                 [&](const Matrix& x) {
                                   return frobenius_dot(w, gaussian_embed(cov, x.values()).matrix());
                                 }),
           a, n);
    return true;
  }

  bool ridge_trial(Rng& rng, std::vector<double>& a, std::vector<double>& n) {
    const std::size_t c = 1 + uniform_index(rng, 7);
    const SymMatrix g = random_symmetric(rng, c);
    const double lambda = uniform(rng, 0.0, 0.5);
    const Matrix w = random_matrix(rng, c, c);
    append(detail::compare_symmetric(g, trace_ridge_backward(g, lambda, w),
                                     [&](const SymMatrix& x) {
                                       return frobenius_dot(w, trace_ridge(x, lambda).matrix());
                                     }),
           a, n);
    return true;
  }

  bool spectral_trial(Rng& rng, std::size_t t, NormalizationMode mode, std::vector<double>& a,
                      std::vector<double>& n) {
    static constexpr std::size_t kOrders[] = {3, 5, 8, 12};
    const std::size_t c = kOrders[t % 4];
    const SymMatrix x = random_spd(rng, c, 0.05, 20.0);
    const auto [y, cache] = normalize_forward(x, mode);
    if (relative_eigengap(cache.eig.values) < 1e-3) return false;
    const Matrix w = random_matrix(rng, c, c);
    const SymMatrix g = normalize_backward(cache, w);
    append(detail::compare_symmetric(
               x, g.matrix(), [&](const SymMatrix& s) { return frobenius_dot(w, normalize_forward(s, mode).first.matrix()); }),
           a, n);
    return true;
  }

  bool maxout_trial(Rng& rng, std::vector<double>& a, std::vector<double>& n) {
    const std::size_t c = 2 + uniform_index(rng, 4), branches = 2 + uniform_index(rng, 4);
    std::vector<SymMatrix> b;
    for (std::size_t k = 0; k < branches; ++k) b.push_back(random_symmetric(rng, c));
    const auto [out, cache] = maxout(b);
    if (cache.min_margin < 1e-3) return false;
    const Matrix w = random_matrix(rng, c, c);
    const auto grads = maxout_backward(cache, w);
    for (std::size_t k = 0; k < branches; ++k) {
      append(detail::compare_symmetric(b[k], grads[k],
                                       [&](const SymMatrix& x) {
                                         auto copy = b;
                                         copy[k] = x;
                                         return frobenius_dot(w, maxout(copy).first.matrix());
                                       }),
             a, n);
    }
    return true;
  }

  bool backbone_trial(Rng& rng, std::vector<double>& a, std::vector<double>& n) {
    Backbone net(1, 4);
    net.he_init(rng);
    FeatureMap input(1, 8, 8);
    for (double& v : input.data.values()) v = uniform01(rng);
    BackboneCache cache;
    const FeatureMatrix f = net.forward(input, &cache);
    if (cache.kink_margin < 1e-6) return false;
    const double h = detail::step_for_margin(cache.kink_margin);
    const Matrix w = random_matrix(rng, f.channels(), f.locations());
    auto loss = [&](const Backbone& b, const FeatureMap& in) {
      return frobenius_dot(w, b.forward(in).matrix());
    };
    auto grads = net.zero_grads();
    const FeatureMap d_in = net.backward(cache, w, grads, true);

    append(detail::compare_dense(input.data, d_in.data,
                                 [&](const Matrix& x) {
                                   FeatureMap in = input;
                                   in.data = x;
                                   return loss(net, in);
                                 },
                                 h),
           a, n);
    auto params = net.parameters("");
    for (const auto& [ti, k] : detail::sample_coordinates(grads, 24, rng)) {
      n.push_back(detail::central_difference(params[ti].tensor->values[k], h, [&] { return loss(net, input); }));
      a.push_back(grads[ti].values[k]);
    }
    return true;
  }

  /// 2 classes, 8x8 single-channel images, D = 4, two rotations, two granularities.
  bool full_trial(Rng& rng, std::vector<double>& a, std::vector<double>& n) {
    ModelConfig cfg;
    cfg.num_classes = 2;
    cfg.image_channels = 1;
    cfg.feature_channels = 4;
    cfg.transforms = 2;
    cfg.granularity_ratios = {1.0, 0.75};
    cfg.crop_size = 0;
    cfg.input_size = 8;
    Model model(cfg, rng());
    for (auto& p : model.head().parameters())
      for (double& v : p.tensor->values) v = 0.5 * normal(rng);

    Image img(8, 8, 1);
    for (double& v : img.pixels) v = uniform01(rng);
    const std::size_t label = uniform_index(rng, 2);
    ForwardCache cache;
    model.forward(img, cache);
    // Distance to the nearest kink: ReLU/pool/maxout switches, eigenvalue crossings,
    // and eigenvalues meeting the rectification bounds.
    double margin = cache.kink_margin();
    const auto& nu = cache.spectral.eig.values;
    for (std::size_t i = 0; i < nu.size(); ++i) {
      margin = std::min({margin, std::abs(nu[i] - cfg.eps_lo), std::abs(nu[i] - cfg.eps_hi)});
      if (i > 0) margin = std::min(margin, nu[i - 1] - nu[i]);
    }
    if (margin < 1e-6) return false;
    const double h = detail::step_for_margin(margin);

    auto grads = model.zero_grads();
    model.backward(cache, cross_entropy_grad(cache.probs, label), grads);
    auto params = model.parameters();
    auto loss = [&] {
      ForwardCache c;
      return cross_entropy(model.forward(img, c, false), label);
    };
    for (const auto& [ti, k] : detail::sample_coordinates(grads, 16, rng)) {
      n.push_back(detail::central_difference(params[ti].tensor->values[k], h, loss));
      a.push_back(grads[ti].values[k]);
    }
    return true;
  }

  std::string scope_;
  std::uint64_t seed_;
};

}  // namespace mgcap
