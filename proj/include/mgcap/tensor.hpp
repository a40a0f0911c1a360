#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace mgcap {

/// Flat parameter or gradient buffer with a shape.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  static Tensor zeros(std::vector<std::size_t> shape) {
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    return Tensor{std::move(shape), std::vector<double>(n, 0.0)};
  }

  std::size_t size() const noexcept { return values.size(); }

  void fill(double v) { std::fill(values.begin(), values.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t k = 0; k < shape.size(); ++k) s += (k ? "," : "") + std::to_string(shape[k]);
  return s + "]";
}

/// Non-owning reference to a named parameter.
struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

}  // namespace mgcap
