#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "verefine/geometry.hpp"
#include "verefine/renderer.hpp"

namespace verefine {

/// Segmented depth observation. Normals are the zero vector where undefined.
struct Observation {
  DepthImage depth;
  NormalImage normals;
  std::vector<Mask> masks;  // one per object, indexed like the scene's objects
  CameraIntrinsics intrinsics;

  /// Builds an observation whose normals are estimated from the depth map.
  static Observation from_depth(DepthImage depth, const CameraIntrinsics& k, std::vector<Mask> masks) {
    Observation obs;
    obs.normals = estimate_normals(depth, k);
    obs.depth = std::move(depth);
    obs.masks = std::move(masks);
    obs.intrinsics = k;
    return obs;
  }

  Mask union_mask() const {
    Mask u(intrinsics.width, intrinsics.height, 0);
    for (const auto& m : masks)
      for (std::size_t i = 0; i < m.size(); ++i) u[i] |= (m[i] != 0);
    return u;
  }

  /// Valid-depth points of one object's segment.
  PointCloud segment_cloud(std::size_t object) const { return backproject(depth, intrinsics, masks.at(object)); }
};

/// Soft thresholds: `tau` on depth (meters) and `alpha` on 1 - n.n_hat.
struct ScoreParams {
  double tau = 0.020;
  double alpha = 1.0 - std::cos(std::numbers::pi / 4.0);

  static double alpha_from_degrees(double deg) { return 1.0 - std::cos(deg2rad(deg)); }

  void validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("ScoreParams: tau must be positive");
    if (!(alpha > 0.0 && alpha <= 2.0)) throw std::invalid_argument("ScoreParams: alpha must be in (0, 2]");
  }
};

inline double depth_term(double observed, double rendered, double tau) {
  const double e = std::abs(observed - rendered);
  return e < tau ? 1.0 - e / tau : 0.0;
}

inline double normal_term(const Vec3& observed, const Vec3& rendered, double alpha) {
  const double e = 1.0 - observed.dot(rendered);
  return e < alpha ? 1.0 - e / alpha : 0.0;
}

/// f_d + f_n of one evaluation pixel. Render misses contribute nothing; an undefined observed
/// normal drops only the normal term.
inline double pixel_terms(const Observation& obs, const RenderBuffer& r, std::size_t i, const ScoreParams& params) {
  if (!(r.depth[i] > 0.0)) return 0.0;
  double s = depth_term(obs.depth[i], r.depth[i], params.tau);
  if (normal_defined(obs.normals[i])) s += normal_term(obs.normals[i], r.normal[i], params.alpha);
  return s;
}

namespace detail {
inline void require_compatible(const Observation& obs, const RenderBuffer& r, const Mask& mask) {
  if (!obs.intrinsics.matches(obs.depth) || !obs.depth.same_shape(r.depth) || !obs.depth.same_shape(mask) ||
      !obs.depth.same_shape(obs.normals))
    throw std::invalid_argument("fit_score: observation, render and mask dimensions differ");
}

struct PixelRect {
  int u0 = 0, v0 = 0, u1 = -1, v1 = -1;  // inclusive
};

inline PixelRect mask_bounds(const Mask& mask) {
  PixelRect r{mask.width(), mask.height(), -1, -1};
  for (int v = 0; v < mask.height(); ++v) {
    const std::uint8_t* row = mask.data().data() + mask.index(0, v);
    for (int u = 0; u < mask.width(); ++u) {
      if (row[u]) {
        r.u0 = std::min(r.u0, u);
        r.u1 = std::max(r.u1, u);
        r.v0 = std::min(r.v0, v);
        r.v1 = std::max(r.v1, v);
      }
    }
  }
  return r;
}
}  // namespace detail

/// Mean of the depth and normal agreement terms over the evaluation pixels: masked pixels with
/// valid observed depth. Returns 0 when there are none.
inline double fit_score(const Observation& obs, const RenderBuffer& r, const Mask& mask, const ScoreParams& params) {
  detail::require_compatible(obs, r, mask);
  const auto box = detail::mask_bounds(mask);
  if (box.u1 < box.u0) return 0.0;

  // Second pass: per-pixel contributions over the mask's bounding box, then a tiled reduction.
  thread_local std::vector<double> values;
  thread_local std::vector<std::uint8_t> valid;
  const std::size_t w = static_cast<std::size_t>(box.u1 - box.u0 + 1);
  const std::size_t n = w * static_cast<std::size_t>(box.v1 - box.v0 + 1);
  values.assign(n, 0.0);
  valid.assign(n, 0);
  std::size_t j = 0;
  for (int v = box.v0; v <= box.v1; ++v) {
    for (int u = box.u0; u <= box.u1; ++u, ++j) {
      const std::size_t i = mask.index(u, v);
      if (!mask[i] || !depth_valid(obs.depth[i])) continue;
      valid[j] = 1;
      values[j] = pixel_terms(obs, r, i, params);
    }
  }
  const auto red = reduce_sums(values, valid);
  if (red.count == 0) return 0.0;
  return 0.5 * red.sum / static_cast<double>(red.count);
}

/// Score of a jointly rendered scene over the union of all object masks.
inline double scene_fit_score(const Observation& obs, const RenderBuffer& scene_render, const ScoreParams& params) {
  return fit_score(obs, scene_render, obs.union_mask(), params);
}

/// Per-pixel 0.5 (f_d + f_n); NaN outside the evaluation pixels.
inline Image<double> score_map(const Observation& obs, const RenderBuffer& r, const Mask& mask,
                               const ScoreParams& params) {
  detail::require_compatible(obs, r, mask);
  Image<double> out(mask.width(), mask.height(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] && depth_valid(obs.depth[i])) out[i] = 0.5 * pixel_terms(obs, r, i, params);
  return out;
}

}  // namespace verefine
