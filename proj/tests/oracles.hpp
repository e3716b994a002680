#pragma once

// Straightforward reference implementations the optimized code is checked against.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include "verefine/geometry.hpp"
#include "verefine/pipeline.hpp"
#include "verefine/renderer.hpp"
#include "verefine/verification.hpp"

namespace oracle {

using verefine::Vec3;

/// Per-pixel score over the whole image, no bounding box, no tiling.
inline double fit_score(const verefine::Observation& obs, const verefine::RenderBuffer& r, const verefine::Mask& mask,
                        double tau, double alpha) {
  double fd = 0.0, fn = 0.0;
  std::size_t n = 0;
  for (int v = 0; v < mask.height(); ++v) {
    for (int u = 0; u < mask.width(); ++u) {
      if (!mask(u, v)) continue;
      const double d = obs.depth(u, v);
      if (!(d > 0.0) || !std::isfinite(d)) continue;
      ++n;
      const double rd = r.depth(u, v);
      if (!(rd > 0.0)) continue;
      fd += std::max(0.0, 1.0 - std::abs(d - rd) / tau);
      const Vec3& on = obs.normals(u, v);
      if (on.squaredNorm() > 0.5) fn += std::max(0.0, 1.0 - (1.0 - on.dot(r.normal(u, v))) / alpha);
    }
  }
  if (n == 0) return 0.0;
  return 0.5 * (fd / static_cast<double>(n) + fn / static_cast<double>(n));
}

/// Node count of the full hypothesis tree: level k holds n^k nodes, counted by enumeration.
inline std::size_t tree_nodes(std::size_t objects, std::size_t hypotheses) {
  std::size_t total = 0;
  std::size_t level = 1;
  for (std::size_t k = 0; k < objects; ++k) {
    std::size_t next = 0;
    for (std::size_t parent = 0; parent < level; ++parent)
      for (std::size_t child = 0; child < hypotheses; ++child) ++next;
    total += next;
    level = next;
  }
  return total;
}

/// Closed form of the same count: n (n^N - 1) / (n - 1).
inline std::size_t tree_nodes_closed_form(std::size_t objects, std::size_t hypotheses) {
  if (hypotheses == 1) return objects;
  std::size_t p = 1;
  for (std::size_t k = 0; k < objects; ++k) p *= hypotheses;
  return hypotheses * (p - 1) / (hypotheses - 1);
}

/// Brute-force nearest neighbour.
inline std::pair<std::size_t, double> nearest(const std::vector<Vec3>& pts, const Vec3& q) {
  std::size_t best = 0;
  double d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double s = (pts[i] - q).squaredNorm();
    if (s < d) {
      d = s;
      best = i;
    }
  }
  return {best, d};
}

/// Ray-cast depth of one pixel against every triangle (Moller-Trumbore), camera frame.
inline double ray_depth(const verefine::TriangleMesh& mesh, const verefine::Pose& pose,
                        const verefine::CameraIntrinsics& k, int u, int v) {
  const Vec3 dir = k.backproject(u, v, 1.0);
  double best = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3 a = pose * mesh.vertices[t[0]], b = pose * mesh.vertices[t[1]], c = pose * mesh.vertices[t[2]];
    const Vec3 e1 = b - a, e2 = c - a;
    const Vec3 p = dir.cross(e2);
    const double det = e1.dot(p);
    if (std::abs(det) < 1e-14) continue;
    const Vec3 s = -a;
    const double bu = s.dot(p) / det;
    if (bu < 0.0 || bu > 1.0) continue;
    const Vec3 q = s.cross(e1);
    const double bv = dir.dot(q) / det;
    if (bv < 0.0 || bu + bv > 1.0) continue;
    const double z = e2.dot(q) / det;  // dir has unit z, so the ray parameter is the depth
    if (z > 0.0 && (best == 0.0 || z < best)) best = z;
  }
  return best;
}

/// Scripted one-dimensional world: the pose is encoded in translation.x and the true value is 0.
struct Scripted {
  static verefine::Pose at(double x) { return verefine::Pose::from_translation(Vec3(x, 0.0, 0.0)); }
  static double x(const verefine::Pose& p) { return p.translation.x(); }

  /// Score peaked at x = 0, in [0, 1].
  static double score(const verefine::Pose& p) { return std::exp(-x(p) * x(p)); }

  /// Refiner that multiplies the offset by `gain` (|gain| > 1 overshoots and diverges).
  static verefine::ObjectOps ops(double gain, std::vector<double>* scored = nullptr, double sim_shift = 0.0,
                                 bool diverge = false) {
    verefine::ObjectOps o;
    o.refine = [gain](const verefine::Pose& p) { return at(gain * x(p)); };
    o.simulate = [sim_shift, diverge](const verefine::Pose& p) -> std::optional<verefine::Pose> {
      if (diverge) return std::nullopt;
      verefine::Pose q = p;
      q.rotation = verefine::rotation_about(Vec3::UnitZ(), sim_shift) * p.rotation;
      q.translation.y() += 0.1;  // discarded by the rotation-only update
      return q;
    };
    o.score = [scored](const verefine::Pose& p) {
      const double s = score(p);
      if (scored) scored->push_back(s);
      return s;
    };
    return o;
  }
};

}  // namespace oracle
