#pragma once

// Desk-scale feature extractor:
//   conv3x3(in->16) + ReLU + maxpool2, conv3x3(16->32) + ReLU + maxpool2, conv3x3(32->D)
// All convolutions are stride 1 with zero padding 1. The last layer has no activation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mgcap/error.hpp"
#include "mgcap/image.hpp"
#include "mgcap/linalg.hpp"
#include "mgcap/rng.hpp"
#include "mgcap/sop.hpp"
#include "mgcap/tensor.hpp"

namespace mgcap {

/// Channels-first activation volume; `data` is channels x (height * width).
struct FeatureMap {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  Matrix data;

  FeatureMap() = default;
  FeatureMap(std::size_t c, std::size_t h, std::size_t w) : channels(c), height(h), width(w), data(c, h * w) {}

  double& at(std::size_t c, std::size_t r, std::size_t col) noexcept { return data(c, r * width + col); }
  double at(std::size_t c, std::size_t r, std::size_t col) const noexcept { return data(c, r * width + col); }
};

inline FeatureMap to_feature_map(const Image& img) {
  FeatureMap out(img.channels, img.height, img.width);
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c)
      for (std::size_t ch = 0; ch < img.channels; ++ch) out.at(ch, r, c) = img.at(r, c, ch);
  return out;
}

namespace detail {

/// (cin * 9) x (h * w) patch matrix for a 3x3 kernel with zero padding 1.
inline Matrix im2col3x3(const FeatureMap& in) {
  const std::size_t h = in.height, w = in.width;
  Matrix cols(in.channels * 9, h * w);
  for (std::size_t c = 0; c < in.channels; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const std::size_t row = (c * 3 + ky) * 3 + kx;
        double* dst = &cols(row, 0);
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - 1;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + static_cast<long>(kx) - 1;
            dst[y * w + x] = (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w))
                                 ? 0.0
                                 : in.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
          }
        }
      }
  return cols;
}

inline FeatureMap col2im3x3(const Matrix& cols, std::size_t channels, std::size_t h, std::size_t w) {
  FeatureMap out(channels, h, w);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const std::size_t row = (c * 3 + ky) * 3 + kx;
        const double* src = &cols(row, 0);
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + static_cast<long>(kx) - 1;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            out.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) += src[y * w + x];
          }
        }
      }
  return out;
}

}  // namespace detail

struct ConvLayer {
  Tensor weight;  // {cout, cin, 3, 3}
  Tensor bias;    // {cout}

  ConvLayer() = default;
  ConvLayer(std::size_t cin, std::size_t cout)
      : weight(Tensor::zeros({cout, cin, 3, 3})), bias(Tensor::zeros({cout})) {}

  std::size_t cin() const { return weight.shape[1]; }
  std::size_t cout() const { return weight.shape[0]; }

  EigenConstMap weight_matrix() const {
    return EigenConstMap(weight.values.data(), static_cast<Eigen::Index>(cout()), static_cast<Eigen::Index>(cin() * 9));
  }

  void he_init(Rng& rng) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(cin() * 9));
    for (double& v : weight.values) v = std_dev * normal(rng);
    bias.fill(0.0);
  }

  FeatureMap forward(const FeatureMap& in, Matrix* cols_out) const {
    if (in.channels != cin())
      throw Error(ErrorKind::ShapeMismatch,
                  "conv expects " + std::to_string(cin()) + " channels, got " + std::to_string(in.channels));
    Matrix cols = detail::im2col3x3(in);
    FeatureMap out(cout(), in.height, in.width);
    out.data.eigen().noalias() = weight_matrix() * cols.eigen();
    for (std::size_t c = 0; c < cout(); ++c) {
      double* row = &out.data(c, 0);
      for (std::size_t k = 0; k < out.data.cols(); ++k) row[k] += bias.values[c];
    }
    if (cols_out) *cols_out = std::move(cols);
    return out;
  }

  /// Accumulates weight/bias gradients; returns dL/dinput when `want_input` is set.
  FeatureMap backward(const Matrix& cols, const FeatureMap& d_out, Tensor& d_weight, Tensor& d_bias, bool want_input,
                      std::size_t in_h, std::size_t in_w) const {
    EigenMap dw(d_weight.values.data(), static_cast<Eigen::Index>(cout()), static_cast<Eigen::Index>(cin() * 9));
    dw.noalias() += d_out.data.eigen() * cols.eigen().transpose();
    for (std::size_t c = 0; c < cout(); ++c) {
      const double* row = &d_out.data(c, 0);
      double s = 0.0;
      for (std::size_t k = 0; k < d_out.data.cols(); ++k) s += row[k];
      d_bias.values[c] += s;
    }
    if (!want_input) return {};
    Matrix d_cols(cin() * 9, in_h * in_w);
    d_cols.eigen().noalias() = weight_matrix().transpose() * d_out.data.eigen();
    return detail::col2im3x3(d_cols, cin(), in_h, in_w);
  }
};

struct BackboneCache {
  FeatureMap input;
  Matrix cols1, cols2, cols3;
  FeatureMap act1, act2;                 // post-ReLU, pre-pool
  std::vector<std::size_t> pool1, pool2;  // flat argmax index into act per pooled cell
  FeatureMap pooled1, pooled2;
  /// Distance of the forward pass from any ReLU or max-pool switch point.
  double kink_margin = std::numeric_limits<double>::infinity();
};

namespace detail {

inline void relu_inplace(FeatureMap& m, double& margin) {
  for (double& v : m.data.values()) {
    margin = std::min(margin, std::abs(v));
    if (v < 0.0) v = 0.0;
  }
}

inline FeatureMap maxpool2(const FeatureMap& in, std::vector<std::size_t>& argmax, double& margin) {
  FeatureMap out(in.channels, in.height / 2, in.width / 2);
  argmax.assign(out.data.size(), 0);
  for (std::size_t c = 0; c < in.channels; ++c)
    for (std::size_t y = 0; y < out.height; ++y)
      for (std::size_t x = 0; x < out.width; ++x) {
        double best = -std::numeric_limits<double>::infinity(), second = best;
        std::size_t best_idx = 0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * y + dy) * in.width + 2 * x + dx;
            const double v = in.data(c, idx);
            if (v > best) {
              second = best;
              best = v;
              best_idx = idx;
            } else if (v > second) {
              second = v;
            }
          }
        if (best > 0.0) margin = std::min(margin, best - second);
        out.data(c, y * out.width + x) = best;
        argmax[c * out.height * out.width + y * out.width + x] = best_idx;
      }
  return out;
}

inline FeatureMap maxpool2_backward(const FeatureMap& d_out, const std::vector<std::size_t>& argmax,
                                    const FeatureMap& act) {
  FeatureMap d_in(act.channels, act.height, act.width);
  const std::size_t cells = d_out.height * d_out.width;
  for (std::size_t c = 0; c < d_out.channels; ++c)
    for (std::size_t k = 0; k < cells; ++k) d_in.data(c, argmax[c * cells + k]) += d_out.data(c, k);
  // ReLU: zero where the activation was clipped
  for (std::size_t k = 0; k < d_in.data.size(); ++k)
    if (act.data.values()[k] <= 0.0) d_in.data.values()[k] = 0.0;
  return d_in;
}

}  // namespace detail

class Backbone {
 public:
  static constexpr std::size_t kWidth1 = 16;
  static constexpr std::size_t kWidth2 = 32;

  Backbone() = default;
  Backbone(std::size_t in_channels, std::size_t feature_channels)
      : conv1_(in_channels, kWidth1), conv2_(kWidth1, kWidth2), conv3_(kWidth2, feature_channels) {}

  std::size_t in_channels() const { return conv1_.cin(); }
  std::size_t feature_channels() const { return conv3_.cout(); }

  void he_init(Rng& rng) {
    conv1_.he_init(rng);
    conv2_.he_init(rng);
    conv3_.he_init(rng);
  }

  std::vector<NamedTensor> parameters(const std::string& prefix) {
    return {{prefix + "conv1.weight", &conv1_.weight}, {prefix + "conv1.bias", &conv1_.bias},
            {prefix + "conv2.weight", &conv2_.weight}, {prefix + "conv2.bias", &conv2_.bias},
            {prefix + "conv3.weight", &conv3_.weight}, {prefix + "conv3.bias", &conv3_.bias}};
  }

  std::vector<Tensor> zero_grads() const {
    return {Tensor::zeros(conv1_.weight.shape), Tensor::zeros(conv1_.bias.shape),
            Tensor::zeros(conv2_.weight.shape), Tensor::zeros(conv2_.bias.shape),
            Tensor::zeros(conv3_.weight.shape), Tensor::zeros(conv3_.bias.shape)};
  }

  /// Returns the final pre-activation features flattened to channels x (H/4 * W/4).
  FeatureMatrix forward(const FeatureMap& input, BackboneCache* cache = nullptr) const {
    if (input.height % 4 != 0 || input.width % 4 != 0 || input.height == 0 || input.width == 0)
      throw Error(ErrorKind::ShapeMismatch, "backbone input sides must be positive multiples of 4");
    BackboneCache local;
    BackboneCache& c = cache ? *cache : local;
    c.kink_margin = std::numeric_limits<double>::infinity();
    c.input = input;

    c.act1 = conv1_.forward(input, &c.cols1);
    detail::relu_inplace(c.act1, c.kink_margin);
    c.pooled1 = detail::maxpool2(c.act1, c.pool1, c.kink_margin);

    c.act2 = conv2_.forward(c.pooled1, &c.cols2);
    detail::relu_inplace(c.act2, c.kink_margin);
    c.pooled2 = detail::maxpool2(c.act2, c.pool2, c.kink_margin);

    FeatureMap out = conv3_.forward(c.pooled2, &c.cols3);
    return FeatureMatrix(std::move(out.data));
  }

  /// Accumulates parameter gradients into `grads` (layout of zero_grads()).
  /// Returns dL/dinput when `want_input` is set, otherwise an empty map.
  FeatureMap backward(const BackboneCache& c, const Matrix& d_features, std::span<Tensor> grads,
                      bool want_input = false) const {
    FeatureMap d3(feature_channels(), c.pooled2.height, c.pooled2.width);
    if (d_features.rows() != d3.data.rows() || d_features.cols() != d3.data.cols())
      throw Error(ErrorKind::ShapeMismatch, "backbone backward: feature gradient shape mismatch");
    d3.data = d_features;

    FeatureMap d_pooled2 =
        conv3_.backward(c.cols3, d3, grads[4], grads[5], true, c.pooled2.height, c.pooled2.width);
    FeatureMap d_act2 = detail::maxpool2_backward(d_pooled2, c.pool2, c.act2);
    FeatureMap d_pooled1 =
        conv2_.backward(c.cols2, d_act2, grads[2], grads[3], true, c.pooled1.height, c.pooled1.width);
    FeatureMap d_act1 = detail::maxpool2_backward(d_pooled1, c.pool1, c.act1);
    return conv1_.backward(c.cols1, d_act1, grads[0], grads[1], want_input, c.input.height, c.input.width);
  }

 private:
  ConvLayer conv1_, conv2_, conv3_;
};

}  // namespace mgcap
