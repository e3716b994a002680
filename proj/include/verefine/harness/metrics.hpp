#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "verefine/geometry.hpp"
#include "verefine/renderer.hpp"

namespace verefine {

/// Discrete proper symmetry group generated by a `cyclic_z`-fold rotation about the object z axis
/// and, optionally, a half turn about x. Covers boxes (2, flip), n-gon prisms (n, flip) and
/// asymmetric shapes (1, no flip).
struct SymmetryGroup {
  int cyclic_z = 1;
  bool flip_x = false;

  std::vector<Mat3> elements() const {
    std::vector<Mat3> g;
    const int n = std::max(cyclic_z, 1);
    for (int flip = 0; flip < (flip_x ? 2 : 1); ++flip)
      for (int i = 0; i < n; ++i)
        g.push_back(rotation_about(Vec3::UnitZ(), 2.0 * std::numbers::pi * i / n) *
                    (flip ? rotation_about(Vec3::UnitX(), std::numbers::pi) : Mat3::Identity()));
    return g;
  }
  std::size_t order() const { return static_cast<std::size_t>(std::max(cyclic_z, 1)) * (flip_x ? 2 : 1); }
  friend bool operator==(const SymmetryGroup&, const SymmetryGroup&) = default;
};

struct PoseError {
  double rotation_deg = 0.0;
  double translation_m = 0.0;
  double add = 0.0;
  double vsd_recall = 1.0;
};

inline constexpr double kVsdTolerance = 0.015;

/// Minimum geodesic distance between R_est and R_gt * S over the group elements S.
inline double symmetric_rotation_error_deg(const Mat3& estimate, const Mat3& truth, const std::vector<Mat3>& group) {
  double best = std::numeric_limits<double>::infinity();
  if (group.empty()) return geodesic_angle_deg(estimate, truth);
  for (const auto& s : group) best = std::min(best, geodesic_angle_deg(estimate, truth * s));
  return best;
}

/// Mean distance of the mesh vertices under the two poses.
inline double add_error(const Pose& estimate, const Pose& truth, const TriangleMesh& mesh) {
  if (mesh.vertices.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& x : mesh.vertices) sum += (estimate * x - truth * x).norm();
  return sum / static_cast<double>(mesh.vertices.size());
}

/// add_error minimized over truth poses made equivalent by the group elements.
inline double symmetric_add_error(const Pose& estimate, const Pose& truth, const TriangleMesh& mesh,
                                  const std::vector<Mat3>& group) {
  if (group.empty()) return add_error(estimate, truth, mesh);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : group) best = std::min(best, add_error(estimate, Pose{truth.rotation * s, truth.translation}, mesh));
  return best;
}

/// Fraction of pixels, over the union of both standalone silhouettes, where both renders are
/// visible and agree in depth within `tolerance`.
inline double vsd_recall(const Pose& estimate, const Pose& truth, const TriangleMesh& mesh, const CameraIntrinsics& k,
                         double tolerance = kVsdTolerance) {
  const RenderBuffer a = render(mesh, estimate, k);
  const RenderBuffer b = render(mesh, truth, k);
  std::size_t total = 0, matched = 0;
  for (std::size_t i = 0; i < a.depth.size(); ++i) {
    const bool ha = a.hit(i), hb = b.hit(i);
    if (!ha && !hb) continue;
    ++total;
    if (ha && hb && std::abs(a.depth[i] - b.depth[i]) < tolerance) ++matched;
  }
  return total == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(total);
}

inline PoseError pose_error(const Pose& estimate, const Pose& truth, const TriangleMesh& mesh,
                            const SymmetryGroup& symmetry, const CameraIntrinsics& k,
                            double vsd_tolerance = kVsdTolerance) {
  PoseError e;
  const auto group = symmetry.elements();
  e.rotation_deg = symmetric_rotation_error_deg(estimate.rotation, truth.rotation, group);
  e.translation_m = (estimate.translation - truth.translation).norm();
  e.add = symmetric_add_error(estimate, truth, mesh, group);
  e.vsd_recall = vsd_recall(estimate, truth, mesh, k, vsd_tolerance);
  return e;
}

}  // namespace verefine
