#pragma once

// Canonical appearance pooling: per-rotation SPD features from weight-shared branches,
// element-wise maxout across rotations, and averaging across granularities.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgcap/error.hpp"
#include "mgcap/image.hpp"
#include "mgcap/linalg.hpp"
#include "mgcap/sop.hpp"

namespace mgcap {

/// Rotations by 360/count * j degrees, j = 0..count-1.
struct TransformSet {
  std::size_t count = 12;

  explicit TransformSet(std::size_t n = 12) : count(n) {
    if (n == 0) throw Error(ErrorKind::InvalidArgument, "transform count must be >= 1");
  }

  double step_deg() const { return 360.0 / static_cast<double>(count); }

  std::vector<double> angles_deg() const {
    std::vector<double> a(count);
    for (std::size_t j = 0; j < count; ++j) a[j] = step_deg() * static_cast<double>(j);
    return a;
  }
};

/// Central-crop side fractions from coarse to fine: ratios[0] == 1, strictly decreasing.
/// A single level may use any ratio in (0, 1], which is how one level is ablated alone.
struct GranularitySpec {
  std::vector<double> crop_ratios{1.0, 0.75, 0.5};

  GranularitySpec() = default;
  explicit GranularitySpec(std::vector<double> ratios) : crop_ratios(std::move(ratios)) { validate(); }

  std::size_t levels() const { return crop_ratios.size(); }

  void validate() const {
    if (crop_ratios.empty()) throw Error(ErrorKind::InvalidArgument, "need at least one granularity");
    if (crop_ratios.size() == 1) {
      if (!(crop_ratios[0] > 0.0 && crop_ratios[0] <= 1.0))
        throw Error(ErrorKind::InvalidArgument, "granularity ratio must lie in (0, 1]");
      return;
    }
    if (crop_ratios[0] != 1.0) throw Error(ErrorKind::InvalidArgument, "first granularity ratio must be 1.0");
    for (std::size_t k = 1; k < crop_ratios.size(); ++k)
      if (!(crop_ratios[k] < crop_ratios[k - 1]) || !(crop_ratios[k] > 0.0))
        throw Error(ErrorKind::InvalidArgument, "granularity ratios must be strictly decreasing in (0, 1]");
  }
};

struct MaxoutCache {
  std::size_t order = 0;
  std::size_t branch_count = 0;
  std::vector<std::uint32_t> argmax;  // row-major, one branch index per element
  std::vector<std::size_t> dominance;  // elements won per branch

  std::uint32_t winner(std::size_t i, std::size_t j) const { return argmax[i * order + j]; }

  /// Smallest gap between the winning value and the runner-up over all elements;
  /// infinity with a single branch.
  double min_margin = 0.0;
};

/// Element-wise maximum; ties resolve to the lowest branch index.
inline std::pair<SymMatrix, MaxoutCache> maxout(std::span<const SymMatrix> branches) {
  if (branches.empty()) throw Error(ErrorKind::DimensionMismatch, "maxout needs at least one branch");
  const std::size_t n = branches[0].order();
  for (const auto& b : branches)
    if (b.order() != n) throw Error(ErrorKind::DimensionMismatch, "maxout branches differ in order");

  MaxoutCache cache{n, branches.size(), std::vector<std::uint32_t>(n * n, 0), std::vector<std::size_t>(branches.size(), 0),
                    std::numeric_limits<double>::infinity()};
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double best = branches[0](i, j);
      double second = -std::numeric_limits<double>::infinity();
      std::uint32_t arg = 0;
      for (std::size_t b = 1; b < branches.size(); ++b) {
        const double v = branches[b](i, j);
        if (v > best) {
          second = best;
          best = v;
          arg = static_cast<std::uint32_t>(b);
        } else if (v > second) {
          second = v;
        }
      }
      out(i, j) = best;
      cache.argmax[i * n + j] = arg;
      ++cache.dominance[arg];
      if (branches.size() > 1) cache.min_margin = std::min(cache.min_margin, best - second);
    }
  return {SymMatrix::symmetrize(out), std::move(cache)};
}

/// Routes each upstream element to the branch that won it.
inline std::vector<Matrix> maxout_backward(const MaxoutCache& cache, const Matrix& upstream) {
  if (upstream.rows() != cache.order || upstream.cols() != cache.order)
    throw Error(ErrorKind::DimensionMismatch, "maxout_backward: upstream order mismatch");
  std::vector<Matrix> out(cache.branch_count, Matrix(cache.order, cache.order));
  for (std::size_t i = 0; i < cache.order; ++i)
    for (std::size_t j = 0; j < cache.order; ++j) out[cache.winner(i, j)](i, j) = upstream(i, j);
  return out;
}

/// (1/S) sum_s G_s.
inline SymMatrix fuse_granularities(std::span<const SymMatrix> per_level) {
  if (per_level.empty()) throw Error(ErrorKind::DimensionMismatch, "fusion needs at least one granularity");
  const std::size_t n = per_level[0].order();
  Matrix acc(n, n);
  for (const auto& g : per_level) {
    if (g.order() != n) throw Error(ErrorKind::DimensionMismatch, "granularity matrices differ in order");
    for (std::size_t k = 0; k < acc.size(); ++k) acc.values()[k] += g.matrix().values()[k];
  }
  const double inv = 1.0 / static_cast<double>(per_level.size());
  for (double& v : acc.values()) v *= inv;
  return SymMatrix::symmetrize(acc);
}

inline std::vector<Matrix> fuse_granularities_backward(std::size_t levels, const Matrix& upstream) {
  return std::vector<Matrix>(levels, scale(upstream, 1.0 / static_cast<double>(levels)));
}

struct CanonicalReport {
  std::vector<std::size_t> canonical_index;  // per granularity
  std::vector<double> canonical_angle_deg;
  std::vector<std::vector<std::size_t>> dominance;
};

/// Per granularity, the branch that won the most elements; ties go to the lowest index.
inline CanonicalReport canonical_report(std::span<const MaxoutCache> caches) {
  CanonicalReport r;
  for (const auto& c : caches) {
    const auto it = std::max_element(c.dominance.begin(), c.dominance.end());
    const auto idx = static_cast<std::size_t>(it - c.dominance.begin());
    r.canonical_index.push_back(idx);
    r.canonical_angle_deg.push_back(TransformSet(c.branch_count).step_deg() * static_cast<double>(idx));
    r.dominance.push_back(c.dominance);
  }
  return r;
}

struct BranchOutput {
  SymMatrix pooled;  // ridge-regularized Gaussian covariance of this rotation
  SopCache sop;
};

/// Runs every rotation of `view` through the shared extractor and pools each result.
/// `extract(image, branch_index)` must return the branch's FeatureMatrix; it owns any
/// per-branch state it needs for a later backward pass.
template <class Extract>
std::vector<BranchOutput> branch_forward(const Image& view, const TransformSet& transforms, Extract&& extract,
                                         const SopConfig& sop_cfg, std::size_t input_size) {
  std::vector<BranchOutput> out;
  const auto angles = transforms.angles_deg();
  out.reserve(angles.size());
  for (std::size_t j = 0; j < angles.size(); ++j) {
    const Image rotated = pad_rotate_resize(view, angles[j], input_size);
    const FeatureMatrix f = extract(rotated, j);
    BranchOutput b;
    b.pooled = sop_forward(f, sop_cfg, &b.sop);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace mgcap
