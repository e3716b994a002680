#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "verefine/geometry.hpp"
#include "verefine/harness/metrics.hpp"

namespace verefine::zoo {

namespace detail {
/// Appends a flat-shaded planar polygon (convex fan) with the given outward normal.
inline void add_flat_polygon(TriangleMesh& m, const std::vector<Vec3>& poly, const Vec3& outward) {
  const auto base = static_cast<std::uint32_t>(m.vertices.size());
  for (const auto& p : poly) {
    m.vertices.push_back(p);
    m.normals.push_back(outward.normalized());
  }
  for (std::uint32_t i = 1; i + 1 < poly.size(); ++i) {
    std::array<std::uint32_t, 3> t{base, base + i, base + i + 1};
    const Vec3 fn = (m.vertices[t[1]] - m.vertices[t[0]]).cross(m.vertices[t[2]] - m.vertices[t[0]]);
    if (fn.dot(outward) < 0.0) std::swap(t[1], t[2]);
    m.triangles.push_back(t);
  }
}

/// Extrudes a simple polygon given in (x, z) along y in [-depth/2, depth/2]. The polygon's
/// caps are triangulated by `cap_triangles` (indices into `outline`).
inline TriangleMesh extrude_xz(const std::vector<Eigen::Vector2d>& outline,
                               const std::vector<std::array<std::uint32_t, 3>>& cap_triangles, double depth) {
  TriangleMesh m;
  const double y0 = -0.5 * depth, y1 = 0.5 * depth;
  for (int side = 0; side < 2; ++side) {
    const double y = side == 0 ? y0 : y1;
    const Vec3 n = side == 0 ? Vec3(0, -1, 0) : Vec3(0, 1, 0);
    for (const auto& t : cap_triangles) {
      std::vector<Vec3> tri;
      for (auto i : t) tri.emplace_back(outline[i].x(), y, outline[i].y());
      add_flat_polygon(m, tri, n);
    }
  }
  // outline is counter-clockwise in (x, z); the outward normal of edge a->b is (dz, -dx)
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : outline) centroid += p;
  centroid /= static_cast<double>(outline.size());
  double signed_area = 0.0;
  for (std::size_t i = 0; i < outline.size(); ++i) {
    const auto& a = outline[i];
    const auto& b = outline[(i + 1) % outline.size()];
    signed_area += a.x() * b.y() - b.x() * a.y();
  }
  const double orient = signed_area > 0.0 ? 1.0 : -1.0;
  for (std::size_t i = 0; i < outline.size(); ++i) {
    const auto& a = outline[i];
    const auto& b = outline[(i + 1) % outline.size()];
    const Eigen::Vector2d d = b - a;
    const Vec3 n = orient * Vec3(d.y(), 0.0, -d.x());
    add_flat_polygon(m, {Vec3(a.x(), y0, a.y()), Vec3(b.x(), y0, b.y()), Vec3(b.x(), y1, b.y()), Vec3(a.x(), y1, a.y())}, n);
  }
  return m;
}
}  // namespace detail

/// Axis-aligned box centered at the origin with flat faces.
inline TriangleMesh box(double sx, double sy, double sz) {
  TriangleMesh m;
  const double x = sx / 2, y = sy / 2, z = sz / 2;
  detail::add_flat_polygon(m, {{x, -y, -z}, {x, y, -z}, {x, y, z}, {x, -y, z}}, Vec3::UnitX());
  detail::add_flat_polygon(m, {{-x, -y, -z}, {-x, -y, z}, {-x, y, z}, {-x, y, -z}}, -Vec3::UnitX());
  detail::add_flat_polygon(m, {{-x, y, -z}, {-x, y, z}, {x, y, z}, {x, y, -z}}, Vec3::UnitY());
  detail::add_flat_polygon(m, {{-x, -y, -z}, {x, -y, -z}, {x, -y, z}, {-x, -y, z}}, -Vec3::UnitY());
  detail::add_flat_polygon(m, {{-x, -y, z}, {x, -y, z}, {x, y, z}, {-x, y, z}}, Vec3::UnitZ());
  detail::add_flat_polygon(m, {{-x, -y, -z}, {-x, y, -z}, {x, y, -z}, {x, -y, -z}}, -Vec3::UnitZ());
  return m;
}

/// Prism with a regular `segments`-gon cross-section about z, centered at the origin.
/// Side normals are smooth (radial); caps are flat.
inline TriangleMesh cylinder(double radius, double height, int segments = 24) {
  if (segments < 3) throw std::invalid_argument("cylinder: need at least 3 segments");
  TriangleMesh m;
  const double z0 = -height / 2, z1 = height / 2;
  std::vector<Vec3> top, bottom;
  for (int i = 0; i < segments; ++i) {
    const double a = 2.0 * std::numbers::pi * i / segments;
    top.emplace_back(radius * std::cos(a), radius * std::sin(a), z1);
    bottom.emplace_back(radius * std::cos(a), radius * std::sin(a), z0);
  }
  detail::add_flat_polygon(m, top, Vec3::UnitZ());
  std::vector<Vec3> bottom_rev(bottom.rbegin(), bottom.rend());
  detail::add_flat_polygon(m, bottom_rev, -Vec3::UnitZ());
  const auto base = static_cast<std::uint32_t>(m.vertices.size());
  for (int i = 0; i < segments; ++i) {
    const Vec3 n(bottom[i].x() / radius, bottom[i].y() / radius, 0.0);
    m.vertices.push_back(bottom[i]);
    m.normals.push_back(n);
    m.vertices.push_back(top[i]);
    m.normals.push_back(n);
  }
  const auto s = static_cast<std::uint32_t>(segments);
  for (std::uint32_t i = 0; i < s; ++i) {
    const std::uint32_t b0 = base + 2 * i, t0 = b0 + 1;
    const std::uint32_t b1 = base + 2 * ((i + 1) % s), t1 = b1 + 1;
    m.triangles.push_back({b0, b1, t1});
    m.triangles.push_back({b0, t1, t0});
  }
  return m;
}

/// Right-triangle prism extruded along y: the vertical face is at -x and the slope runs down to
/// +x. Bounding box centered at the origin.
inline TriangleMesh wedge(double sx, double sy, double sz) {
  const double x = sx / 2, z = sz / 2;
  return detail::extrude_xz({{-x, -z}, {x, -z}, {-x, z}}, {{0, 1, 2}}, sy);
}

/// L-shaped extrusion (non-convex) with arm thickness `t`; bounding box centered at the origin.
inline TriangleMesh l_shape(double sx, double sy, double sz, double t) {
  const double x0 = -sx / 2, z0 = -sz / 2;
  const std::vector<Eigen::Vector2d> outline{{x0, z0},         {x0 + sx, z0},    {x0 + sx, z0 + t},
                                             {x0 + t, z0 + t}, {x0 + t, z0 + sz}, {x0, z0 + sz}};
  return detail::extrude_xz(outline, {{0, 1, 2}, {0, 2, 3}, {0, 3, 4}, {0, 4, 5}}, sy);
}

enum class Kind { box, cylinder, wedge, l_shape };

inline const std::vector<Kind>& all_kinds() {
  static const std::vector<Kind> kinds{Kind::box, Kind::cylinder, Kind::wedge, Kind::l_shape};
  return kinds;
}

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::box: return "box";
    case Kind::cylinder: return "cylinder";
    case Kind::wedge: return "wedge";
    case Kind::l_shape: return "l_shape";
  }
  return "?";
}

inline Kind kind_from_string(const std::string& s) {
  for (auto k : all_kinds())
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown mesh kind '" + s + "'");
}

/// Desk-scale default instance of each zoo shape.
inline TriangleMesh make(Kind k) {
  switch (k) {
    case Kind::box: return box(0.08, 0.05, 0.04);
    case Kind::cylinder: return cylinder(0.03, 0.08, 24);
    case Kind::wedge: return wedge(0.08, 0.05, 0.04);
    case Kind::l_shape: return l_shape(0.07, 0.05, 0.06, 0.02);
  }
  throw std::invalid_argument("unknown mesh kind");
}

/// Proper rotational symmetries of the default instance, object frame.
inline SymmetryGroup symmetry(Kind k) {
  switch (k) {
    case Kind::box: return {2, true};
    case Kind::cylinder: return {24, true};
    case Kind::wedge:
    case Kind::l_shape: return {1, false};
  }
  return {};
}

inline std::vector<Mat3> symmetries(Kind k) { return symmetry(k).elements(); }

}  // namespace verefine::zoo
