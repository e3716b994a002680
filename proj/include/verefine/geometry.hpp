#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "verefine/image.hpp"

namespace verefine {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// All randomness in the library is drawn from caller-owned generators of this type.
using Rng = std::mt19937_64;

constexpr double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

inline Mat3 rotation_about(const Vec3& axis, double angle_rad) {
  return Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
}

/// Closest proper rotation to `m` in the Frobenius sense.
inline Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

/// Angle of the relative rotation a^T b, in radians. Uses atan2 so small angles keep full precision.
inline double geodesic_angle(const Mat3& a, const Mat3& b) {
  const Mat3 r = a.transpose() * b;
  const Vec3 vee(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * vee.norm(), 0.5 * (r.trace() - 1.0));
}

inline double geodesic_angle_deg(const Mat3& a, const Mat3& b) { return rad2deg(geodesic_angle(a, b)); }

/// Rigid transform x -> rotation * x + translation (object frame to camera frame).
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from(const Mat3& r, const Vec3& t) { return Pose{r, t}; }
  static Pose from_translation(const Vec3& t) { return Pose{Mat3::Identity(), t}; }

  Vec3 operator*(const Vec3& x) const { return rotation * x + translation; }

  Pose inverse() const {
    const Mat3 rt = rotation.transpose();
    return Pose{rt, -(rt * translation)};
  }

  /// Maximum deviation of rotation^T rotation from the identity.
  double orthonormality_drift() const {
    return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  }

  bool is_valid(double tol = 1e-6) const {
    return rotation.allFinite() && translation.allFinite() && orthonormality_drift() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }

  friend bool operator==(const Pose& a, const Pose& b) {
    return a.rotation == b.rotation && a.translation == b.translation;
  }
};

/// Applies b first, then a.
inline Pose compose(const Pose& a, const Pose& b) {
  Pose out{a.rotation * b.rotation, a.rotation * b.translation + a.translation};
  if (out.orthonormality_drift() > 1e-9) out.rotation = nearest_rotation(out.rotation);
  return out;
}

inline Pose operator*(const Pose& a, const Pose& b) { return compose(a, b); }

inline double rotation_distance_deg(const Pose& a, const Pose& b) {
  return geodesic_angle_deg(a.rotation, b.rotation);
}

inline double translation_distance(const Pose& a, const Pose& b) {
  return (a.translation - b.translation).norm();
}

/// Uniform direction on the unit sphere from normalized Gaussian draws.
inline Vec3 random_unit_vector(Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (;;) {
    const Vec3 v(gauss(rng), gauss(rng), gauss(rng));
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

/// Rotates `p` about a uniformly sampled axis through the object origin by exactly `angle_deg`.
inline Pose perturb_rotation(const Pose& p, double angle_deg, Rng& rng) {
  if (!(angle_deg >= 0.0)) throw std::invalid_argument("perturb_rotation: angle must be >= 0");
  const Vec3 axis = random_unit_vector(rng);
  if (angle_deg == 0.0) return p;
  return Pose{p.rotation * rotation_about(axis, deg2rad(angle_deg)), p.translation};
}

/// Offsets `p` along a uniformly sampled direction by exactly `distance` meters.
inline Pose perturb_translation(const Pose& p, double distance, Rng& rng) {
  if (!(distance >= 0.0)) throw std::invalid_argument("perturb_translation: distance must be >= 0");
  const Vec3 dir = random_unit_vector(rng);
  if (distance == 0.0) return p;
  return Pose{p.rotation, p.translation + distance * dir};
}

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  std::vector<Vec3> normals;  // per vertex

  /// Empty string when the mesh satisfies its invariants, otherwise the first violation.
  std::string validation_error() const {
    if (vertices.empty() || triangles.empty()) return "mesh is empty";
    if (normals.size() != vertices.size()) return "normal count does not match vertex count";
    for (const auto& v : vertices)
      if (!v.allFinite()) return "non-finite vertex";
    for (const auto& n : normals)
      if (!n.allFinite() || std::abs(n.norm() - 1.0) > 1e-6) return "normal is not unit length";
    for (const auto& t : triangles)
      for (auto i : t)
        if (i >= vertices.size()) return "triangle index out of range";
    return {};
  }

  void validate() const {
    if (auto e = validation_error(); !e.empty()) throw std::invalid_argument("TriangleMesh: " + e);
  }

  double surface_area() const {
    double a = 0.0;
    for (const auto& t : triangles)
      a += 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
    return a;
  }
};

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;  // empty or one per point

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !normals.empty(); }

  bool is_valid() const {
    for (const auto& p : points)
      if (!p.allFinite()) return false;
    if (normals.empty()) return true;
    if (normals.size() != points.size()) return false;
    for (const auto& n : normals)
      if (std::abs(n.norm() - 1.0) > 1e-6) return false;
    return true;
  }

  Vec3 centroid() const {
    Vec3 c = Vec3::Zero();
    for (const auto& p : points) c += p;
    return points.empty() ? c : Vec3(c / static_cast<double>(points.size()));
  }
};

inline PointCloud transformed(const PointCloud& cloud, const Pose& pose) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(pose * p);
  out.normals.reserve(cloud.normals.size());
  for (const auto& n : cloud.normals) out.normals.push_back(pose.rotation * n);
  return out;
}

/// Pinhole camera. Image coordinates are continuous; pixel (u, v) covers [u, u+1) x [v, v+1)
/// and is sampled at its center (u + 0.5, v + 0.5).
struct CameraIntrinsics {
  double fx = 525.0;
  double fy = 525.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  bool is_valid() const { return fx > 0.0 && fy > 0.0 && width > 0 && height > 0; }

  template <typename T>
  bool matches(const Image<T>& img) const {
    return img.width() == width && img.height() == height;
  }

  Eigen::Vector2d project(const Vec3& p) const { return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy}; }

  /// Camera-frame point seen through the center of pixel (u, v) at depth z.
  Vec3 backproject(int u, int v, double z) const {
    return {(u + 0.5 - cx) * z / fx, (v + 0.5 - cy) * z / fy, z};
  }

  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

inline bool depth_valid(double d) { return std::isfinite(d) && d > 0.0; }

/// {x : normal . x = offset}
struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;

  double signed_distance(const Vec3& x) const { return normal.dot(x) - offset; }
  Vec3 gravity_direction() const { return -normal; }

  Plane transformed(const Pose& pose) const {
    const Vec3 n = pose.rotation * normal;
    return Plane{n, offset + n.dot(pose.translation)};
  }
  Plane flipped() const { return Plane{-normal, -offset}; }
};

namespace detail {
inline void require_same_shape(const DepthImage& depth, const CameraIntrinsics& k) {
  if (!k.matches(depth)) throw std::invalid_argument("depth dimensions do not match intrinsics");
}
}  // namespace detail

/// One camera-frame point per valid masked depth pixel. An empty mask selects every pixel.
/// An empty result means the segment is unusable.
inline PointCloud backproject(const DepthImage& depth, const CameraIntrinsics& k, const Mask& mask = {}) {
  detail::require_same_shape(depth, k);
  if (!mask.empty() && !mask.same_shape(depth)) throw std::invalid_argument("mask dimensions do not match depth");
  PointCloud cloud;
  for (int v = 0; v < depth.height(); ++v) {
    for (int u = 0; u < depth.width(); ++u) {
      if (!mask.empty() && mask(u, v) == 0) continue;
      const double z = depth(u, v);
      if (depth_valid(z)) cloud.points.push_back(k.backproject(u, v, z));
    }
  }
  return cloud;
}

/// Maximum depth jump between a pixel and its neighbors for a normal to be defined.
inline constexpr double kNormalDiscontinuity = 0.02;

/// Central-difference normals of the backprojected depth grid, oriented toward the camera.
/// Border pixels, invalid pixels and pixels next to a depth discontinuity get the zero vector.
inline NormalImage estimate_normals(const DepthImage& depth, const CameraIntrinsics& k) {
  detail::require_same_shape(depth, k);
  NormalImage normals(depth.width(), depth.height(), Vec3::Zero());
  for (int v = 1; v + 1 < depth.height(); ++v) {
    for (int u = 1; u + 1 < depth.width(); ++u) {
      const double z = depth(u, v);
      if (!depth_valid(z)) continue;
      const std::array<double, 4> nb{depth(u - 1, v), depth(u + 1, v), depth(u, v - 1), depth(u, v + 1)};
      bool ok = true;
      for (double d : nb) ok = ok && depth_valid(d) && std::abs(d - z) <= kNormalDiscontinuity;
      if (!ok) continue;
      const Vec3 tu = k.backproject(u + 1, v, nb[1]) - k.backproject(u - 1, v, nb[0]);
      const Vec3 tv = k.backproject(u, v + 1, nb[3]) - k.backproject(u, v - 1, nb[2]);
      Vec3 n = tu.cross(tv);
      const double len = n.norm();
      if (!(len > 0.0)) continue;
      n /= len;
      if (n.dot(k.backproject(u, v, z)) > 0.0) n = -n;
      normals(u, v) = n;
    }
  }
  return normals;
}

struct PlaneFit {
  Plane plane;
  std::vector<std::size_t> inliers;  // ascending indices into the input cloud
  double inlier_ratio = 0.0;
};

struct RansacOptions {
  int iterations = 300;
  double min_inlier_ratio = 0.1;
};

namespace detail {
inline std::vector<std::size_t> plane_inliers(std::span<const Vec3> pts, const Plane& plane, double threshold) {
  std::vector<std::size_t> in;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (std::abs(plane.signed_distance(pts[i])) <= threshold) in.push_back(i);
  return in;
}

/// Total-least-squares plane through the selected points.
inline std::optional<Plane> least_squares_plane(std::span<const Vec3> pts, const std::vector<std::size_t>& idx) {
  if (idx.size() < 3) return std::nullopt;
  Vec3 c = Vec3::Zero();
  for (auto i : idx) c += pts[i];
  c /= static_cast<double>(idx.size());
  Mat3 cov = Mat3::Zero();
  for (auto i : idx) {
    const Vec3 d = pts[i] - c;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  const auto ev = es.eigenvalues();
  if (!(ev(1) > 1e-12 * std::max(ev(2), 1e-300))) return std::nullopt;  // collinear
  const Vec3 n = es.eigenvectors().col(0).normalized();
  return Plane{n, n.dot(c)};
}
}  // namespace detail

/// RANSAC support plane followed by a least-squares fit on the inliers. The normal points toward
/// the side holding most off-plane points (the objects); with no off-plane points, toward the
/// camera. Returns nullopt for degenerate input or when under `min_inlier_ratio` of the points fit.
inline std::optional<PlaneFit> fit_support_plane(const PointCloud& cloud, double threshold, Rng& rng,
                                                 const RansacOptions& opts = {}) {
  if (cloud.size() < 3) throw std::invalid_argument("fit_support_plane: need at least 3 points");
  if (!(threshold > 0.0)) throw std::invalid_argument("fit_support_plane: threshold must be positive");
  const std::span<const Vec3> pts(cloud.points);
  std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);

  std::optional<Plane> best;
  std::size_t best_count = 0;
  for (int it = 0; it < opts.iterations; ++it) {
    const std::size_t i = pick(rng), j = pick(rng), l = pick(rng);
    if (i == j || j == l || i == l) continue;
    const Vec3 n = (pts[j] - pts[i]).cross(pts[l] - pts[i]);
    const double len = n.norm();
    const double scale = (pts[j] - pts[i]).norm() * (pts[l] - pts[i]).norm();
    if (!(len > 1e-9 * scale) || !(len > 0.0)) continue;
    const Plane cand{n / len, (n / len).dot(pts[i])};
    std::size_t count = 0;
    for (const auto& p : pts) count += std::abs(cand.signed_distance(p)) <= threshold;
    if (count > best_count) {
      best_count = count;
      best = cand;
    }
  }
  if (!best) return std::nullopt;

  auto inliers = detail::plane_inliers(pts, *best, threshold);
  if (auto refined = detail::least_squares_plane(pts, inliers)) {
    auto refit = detail::plane_inliers(pts, *refined, threshold);
    if (refit.size() >= inliers.size()) {
      best = refined;
      inliers = std::move(refit);
    }
  }

  PlaneFit fit{*best, std::move(inliers), 0.0};
  fit.inlier_ratio = static_cast<double>(fit.inliers.size()) / static_cast<double>(pts.size());
  if (fit.inlier_ratio < opts.min_inlier_ratio) return std::nullopt;

  long above = 0, below = 0;
  for (const auto& p : pts) {
    const double d = fit.plane.signed_distance(p);
    if (d > threshold) ++above;
    if (d < -threshold) ++below;
  }
  if (below > above || (below == above && fit.plane.offset > 0.0)) fit.plane = fit.plane.flipped();
  return fit;
}

}  // namespace verefine
