#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mgcap/error.hpp"
#include "mgcap/linalg.hpp"
#include "mgcap/rng.hpp"
#include "mgcap/tensor.hpp"

namespace mgcap {

inline std::size_t upper_triangle_length(std::size_t order) { return order * (order + 1) / 2; }

/// Upper triangle (row-major, i <= j) with off-diagonal entries scaled by sqrt(2),
/// so <vec(A), vec(B)> equals the Frobenius product of symmetric A and B.
inline std::vector<double> vectorize_upper(const SymMatrix& g) {
  const std::size_t n = g.order();
  std::vector<double> v;
  v.reserve(upper_triangle_length(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) v.push_back(i == j ? g(i, j) : std::sqrt(2.0) * g(i, j));
  return v;
}

/// Adjoint of vectorize_upper, returned as a symmetric gradient.
inline Matrix devectorize_upper_grad(std::span<const double> dv, std::size_t order) {
  if (dv.size() != upper_triangle_length(order))
    throw Error(ErrorKind::ShapeMismatch, "vectorized gradient length does not match matrix order");
  Matrix out(order, order);
  std::size_t k = 0;
  for (std::size_t i = 0; i < order; ++i)
    for (std::size_t j = i; j < order; ++j, ++k) {
      if (i == j) {
        out(i, i) = dv[k];
      } else {
        out(i, j) = dv[k] / std::sqrt(2.0);
        out(j, i) = out(i, j);
      }
    }
  return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double s = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    s += v;
  }
  for (double& v : p) v /= s;
  return p;
}

/// -log p[label].
inline double cross_entropy(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size())
    throw Error(ErrorKind::LabelOutOfRange, "label " + std::to_string(label) + " with " + std::to_string(probs.size()) + " classes");
  return -std::log(std::max(probs[label], 1e-300));
}

/// dL/dlogits = p - onehot(label).
inline std::vector<double> cross_entropy_grad(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) throw Error(ErrorKind::LabelOutOfRange, "label out of range");
  std::vector<double> g(probs.begin(), probs.end());
  g[label] -= 1.0;
  return g;
}

/// Affine map over the vectorized SPD feature followed by softmax.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(std::size_t num_classes, std::size_t feature_order, bool use_bias = true)
      : order_(feature_order),
        use_bias_(use_bias),
        weight_(Tensor::zeros({num_classes, upper_triangle_length(feature_order)})),
        bias_(Tensor::zeros({num_classes})) {}

  std::size_t num_classes() const { return weight_.shape[0]; }
  std::size_t feature_order() const { return order_; }
  std::size_t input_dim() const { return weight_.shape[1]; }
  bool use_bias() const { return use_bias_; }

  void init(Rng& rng, double std_dev = 0.01) {
    for (double& v : weight_.values) v = std_dev * normal(rng);
    bias_.fill(0.0);
  }

  std::vector<NamedTensor> parameters() { return {{"head.weight", &weight_}, {"head.bias", &bias_}}; }
  std::vector<Tensor> zero_grads() const { return {Tensor::zeros(weight_.shape), Tensor::zeros(bias_.shape)}; }

  std::vector<double> logits(const SymMatrix& g) const {
    if (g.order() != order_)
      throw Error(ErrorKind::ShapeMismatch,
                  "classifier expects order " + std::to_string(order_) + ", got " + std::to_string(g.order()));
    const std::vector<double> v = vectorize_upper(g);
    std::vector<double> z(num_classes(), 0.0);
    const std::size_t d = input_dim();
    for (std::size_t c = 0; c < num_classes(); ++c) {
      const double* w = &weight_.values[c * d];
      z[c] = std::inner_product(v.begin(), v.end(), w, use_bias_ ? bias_.values[c] : 0.0);
    }
    return z;
  }

  std::vector<double> classify(const SymMatrix& g) const { return softmax(logits(g)); }

  /// Accumulates parameter gradients into `grads` and returns dL/dG (symmetric).
  Matrix backward(const SymMatrix& g, std::span<const double> d_logits, std::span<Tensor> grads) const {
    const std::vector<double> v = vectorize_upper(g);
    const std::size_t d = input_dim();
    std::vector<double> dv(d, 0.0);
    for (std::size_t c = 0; c < num_classes(); ++c) {
      const double gz = d_logits[c];
      double* dw = &grads[0].values[c * d];
      const double* w = &weight_.values[c * d];
      for (std::size_t k = 0; k < d; ++k) {
        dw[k] += gz * v[k];
        dv[k] += gz * w[k];
      }
      if (use_bias_) grads[1].values[c] += gz;
    }
    return devectorize_upper_grad(dv, order_);
  }

 private:
  std::size_t order_ = 0;
  bool use_bias_ = true;
  Tensor weight_;
  Tensor bias_;
};

}  // namespace mgcap
