#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mgcap/error.hpp"
#include "mgcap/tensor.hpp"

namespace mgcap {

/// Step decay: base * factor^floor(epoch / step).
struct LrSchedule {
  double base = 0.1;
  double factor = 0.15;
  int step_epochs = 30;

  double at(int epoch) const {
    if (step_epochs <= 0) return base;
    return base * std::pow(factor, static_cast<double>(epoch / step_epochs));
  }
};

struct OptimizerState {
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<Tensor> velocity;

  void init_like(std::span<const NamedTensor> params) {
    velocity.clear();
    for (const auto& p : params) velocity.push_back(Tensor::zeros(p.tensor->shape));
  }
};

/// v <- momentum * v + (g + weight_decay * w);  w <- w - lr * v.
/// Only entries with `active[k]` set are touched; an empty `active` updates everything.
inline void sgd_momentum_step(std::span<const NamedTensor> params, std::span<const Tensor> grads, OptimizerState& state,
                              double lr, std::span<const bool> active = {}) {
  if (params.size() != grads.size() || params.size() != state.velocity.size())
    throw Error(ErrorKind::ShapeMismatch, "optimizer: parameter, gradient and velocity counts differ");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!active.empty() && !active[k]) continue;
    Tensor& w = *params[k].tensor;
    Tensor& v = state.velocity[k];
    const Tensor& g = grads[k];
    if (w.size() != g.size() || w.size() != v.size())
      throw Error(ErrorKind::ShapeMismatch, "optimizer: shape mismatch for " + params[k].name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      v.values[i] = state.momentum * v.values[i] + (g.values[i] + state.weight_decay * w.values[i]);
      w.values[i] -= lr * v.values[i];
    }
  }
}

}  // namespace mgcap
