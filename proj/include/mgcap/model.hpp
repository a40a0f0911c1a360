#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mgcap/backbone.hpp"
#include "mgcap/canonical.hpp"
#include "mgcap/error.hpp"
#include "mgcap/head.hpp"
#include "mgcap/image.hpp"
#include "mgcap/rng.hpp"
#include "mgcap/sop.hpp"
#include "mgcap/spectral.hpp"
#include "mgcap/tensor.hpp"

namespace mgcap {

struct ModelConfig {
  std::size_t num_classes = 8;
  std::size_t image_channels = 1;
  std::size_t feature_channels = 32;  // D, the backbone output width
  std::size_t transforms = 12;
  std::vector<double> granularity_ratios{1.0, 0.75, 0.5};
  NormalizationMode normalization = NormalizationMode::SqrtE;
  SopConfig sop;
  double eps_lo = 1e-5;
  double eps_hi = 1e5;
  double degeneracy_tol = kDefaultDegeneracyTol;
  std::size_t crop_size = 56;   // square view taken from each image (0: the full image)
  std::size_t input_size = 32;  // backbone input side, a multiple of 4
  bool head_bias = true;

  std::size_t feature_order() const { return sop.use_gaussian ? feature_channels + 1 : feature_channels; }
};

/// Everything a backward pass needs from one forward pass.
struct ForwardCache {
  struct Level {
    std::vector<BranchOutput> branches;
    std::vector<BackboneCache> backbone;  // empty when not kept
    MaxoutCache maxout;
    SymMatrix pooled;
  };
  std::vector<Level> levels;
  SymMatrix fused;
  SpectralCache spectral;
  SymMatrix normalized;
  std::vector<double> logits;
  std::vector<double> probs;

  /// Minimum distance to a ReLU/max-pool switch, a maxout tie, or an eigenvalue
  /// coincidence; finite-difference checks are only meaningful when this is not tiny.
  double kink_margin() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& l : levels) {
      m = std::min(m, l.maxout.min_margin);
      for (const auto& b : l.backbone) m = std::min(m, b.kink_margin);
    }
    return m;
  }
};

class Model {
 public:
  Model() = default;

  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    GranularitySpec(cfg_.granularity_ratios).validate();
    if (cfg_.input_size == 0 || cfg_.input_size % 4 != 0)
      throw Error(ErrorKind::InvalidArgument, "input_size must be a positive multiple of 4");
    for (std::size_t s = 0; s < cfg_.granularity_ratios.size(); ++s) {
      backbones_.emplace_back(cfg_.image_channels, cfg_.feature_channels);
      Rng rng = make_rng({seed, 0xbacbu, s});
      backbones_.back().he_init(rng);
    }
    head_ = ClassifierHead(cfg_.num_classes, cfg_.feature_order(), cfg_.head_bias);
    Rng rng = make_rng({seed, 0x4eadu});
    head_.init(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  std::size_t levels() const { return backbones_.size(); }
  Backbone& backbone(std::size_t s) { return backbones_[s]; }
  const Backbone& backbone(std::size_t s) const { return backbones_[s]; }
  ClassifierHead& head() { return head_; }
  const ClassifierHead& head() const { return head_; }

  /// Order: per granularity g<s>.conv{1,2,3}.{weight,bias}, then head.{weight,bias}.
  std::vector<NamedTensor> parameters() {
    std::vector<NamedTensor> out;
    for (std::size_t s = 0; s < backbones_.size(); ++s) {
      auto p = backbones_[s].parameters("g" + std::to_string(s) + ".");
      out.insert(out.end(), p.begin(), p.end());
    }
    auto h = head_.parameters();
    out.insert(out.end(), h.begin(), h.end());
    return out;
  }

  std::vector<Tensor> zero_grads() const {
    std::vector<Tensor> out;
    for (const auto& b : backbones_) {
      auto g = b.zero_grads();
      out.insert(out.end(), std::make_move_iterator(g.begin()), std::make_move_iterator(g.end()));
    }
    auto h = head_.zero_grads();
    out.insert(out.end(), std::make_move_iterator(h.begin()), std::make_move_iterator(h.end()));
    return out;
  }

  /// Index of the first head tensor in parameters()/zero_grads().
  std::size_t head_param_offset() const { return backbones_.size() * 6; }

  /// Square view used at evaluation: centered crop_size window.
  Image eval_view(const Image& img) const {
    check_image(img);
    return center_crop_to(img, view_side(img));
  }

  /// Training view: random crop_size window, then a horizontal flip with probability 0.5.
  Image train_view(const Image& img, Rng& rng, bool flip = true) const {
    check_image(img);
    Image v = random_crop(img, view_side(img), rng);
    return flip ? random_hflip(v, rng) : v;
  }

  /// View for granularity s: central crop by its ratio, upsampled back to the view side.
  Image granularity_view(const Image& view, std::size_t s) const {
    const double ratio = cfg_.granularity_ratios[s];
    if (ratio == 1.0) return view;
    const Image c = center_crop(view, ratio);
    return resize_bilinear(c, view.height, view.width);
  }

  /// Full pipeline on an already prepared square view.
  std::vector<double> forward(const Image& view, ForwardCache& cache, bool keep_backbone = true) const {
    if (view.channels != cfg_.image_channels)
      throw Error(ErrorKind::ShapeMismatch, "model expects " + std::to_string(cfg_.image_channels) +
                                                " channels, got " + std::to_string(view.channels));
    const TransformSet transforms(cfg_.transforms);
    cache.levels.assign(backbones_.size(), {});
    std::vector<SymMatrix> per_level;
    for (std::size_t s = 0; s < backbones_.size(); ++s) {
      auto& level = cache.levels[s];
      if (keep_backbone) level.backbone.resize(transforms.count);
      const Backbone& net = backbones_[s];
      auto extract = [&](const Image& x, std::size_t j) {
        return net.forward(to_feature_map(x), keep_backbone ? &level.backbone[j] : nullptr);
      };
      level.branches = branch_forward(granularity_view(view, s), transforms, extract, cfg_.sop, cfg_.input_size);
      std::vector<SymMatrix> pooled;
      pooled.reserve(level.branches.size());
      for (const auto& b : level.branches) pooled.push_back(b.pooled);
      auto [g, mc] = maxout(pooled);
      level.pooled = std::move(g);
      level.maxout = std::move(mc);
      per_level.push_back(level.pooled);
    }
    cache.fused = fuse_granularities(per_level);
    auto [y, sc] = normalize_forward(cache.fused, cfg_.normalization, cfg_.eps_lo, cfg_.eps_hi);
    cache.normalized = std::move(y);
    cache.spectral = std::move(sc);
    cache.logits = head_.logits(cache.normalized);
    cache.probs = softmax(cache.logits);
    return cache.probs;
  }

  std::vector<double> predict(const Image& img) const {
    ForwardCache cache;
    return forward(eval_view(img), cache, false);
  }

  /// Backpropagates dL/dlogits, accumulating into `grads` (layout of zero_grads()).
  /// With `head_only` the backbone is left untouched.
  void backward(const ForwardCache& cache, std::span<const double> d_logits, std::vector<Tensor>& grads,
                bool head_only = false) const {
    const std::span<Tensor> all(grads);
    const Matrix d_normalized = head_.backward(cache.normalized, d_logits, all.subspan(head_param_offset(), 2));
    if (head_only) return;

    const SymMatrix d_fused = normalize_backward(cache.spectral, d_normalized, cfg_.degeneracy_tol);
    const auto d_levels = fuse_granularities_backward(backbones_.size(), d_fused);
    for (std::size_t s = 0; s < backbones_.size(); ++s) {
      const auto& level = cache.levels[s];
      if (level.backbone.size() != level.branches.size())
        throw Error(ErrorKind::InvalidArgument, "backward needs a forward pass run with keep_backbone");
      const auto d_branches = maxout_backward(level.maxout, d_levels[s]);
      const std::span<Tensor> bgrads = all.subspan(s * 6, 6);
      for (std::size_t j = 0; j < d_branches.size(); ++j) {
        if (level.maxout.dominance[j] == 0) continue;  // nothing routed here
        const Matrix d_f = sop_backward(level.branches[j].sop, cfg_.sop, d_branches[j]);
        backbones_[s].backward(level.backbone[j], d_f, bgrads);
      }
    }
  }

 private:
  std::size_t view_side(const Image& img) const {
    const std::size_t side = std::min(img.height, img.width);
    return cfg_.crop_size == 0 ? side : cfg_.crop_size;
  }

  void check_image(const Image& img) const {
    if (img.height < 8 || img.width < 8)
      throw Error(ErrorKind::ShapeMismatch, "images must be at least 8x8");
    if (cfg_.crop_size > std::min(img.height, img.width))
      throw Error(ErrorKind::CropOutOfBounds, "crop_size " + std::to_string(cfg_.crop_size) + " exceeds image side");
  }

  ModelConfig cfg_;
  std::vector<Backbone> backbones_;
  ClassifierHead head_;
};

}  // namespace mgcap
