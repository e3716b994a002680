#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "verefine/geometry.hpp"

namespace verefine {

/// Closed convex polyhedron: outward-oriented triangles over its extreme vertices.
struct ConvexHull {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;
  std::vector<Plane> planes;  // distinct supporting planes, outward normals
  std::vector<std::vector<std::uint32_t>> polygons;  // per plane, vertex loop counter-clockwise about the normal

  /// Largest signed distance to any face plane; <= 0 inside.
  double signed_distance(const Vec3& p) const {
    double d = -std::numeric_limits<double>::infinity();
    for (const auto& pl : planes) d = std::max(d, pl.signed_distance(p));
    return d;
  }
};

struct MassProperties {
  double volume = 0.0;
  Vec3 center = Vec3::Zero();
  Mat3 inertia = Mat3::Zero();  // about `center`, scaled to the requested mass
};

/// Incremental 3D convex hull. Points within a scale-relative epsilon of the current hull are
/// treated as interior, so face-interior and duplicate points never become hull vertices.
/// Returns nullopt for flat or zero-volume inputs.
inline std::optional<ConvexHull> convex_hull(std::span<const Vec3> input) {
  if (input.size() < 4) return std::nullopt;
  Vec3 lo = input[0], hi = input[0];
  for (const auto& p : input) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double scale = (hi - lo).norm();
  if (!(scale > 0.0)) return std::nullopt;
  const double eps = 1e-9 * scale;

  std::vector<Vec3> pts(input.begin(), input.end());
  // initial simplex
  std::size_t i0 = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (pts[i].x() < pts[i0].x()) i0 = i;
  std::size_t i1 = i0;
  double best = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (double d = (pts[i] - pts[i0]).norm(); d > best) best = d, i1 = i;
  if (best <= eps) return std::nullopt;
  std::size_t i2 = i0;
  best = 0.0;
  const Vec3 dir = (pts[i1] - pts[i0]).normalized();
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (double d = (pts[i] - pts[i0]).cross(dir).norm(); d > best) best = d, i2 = i;
  if (best <= eps) return std::nullopt;
  const Vec3 pn = (pts[i1] - pts[i0]).cross(pts[i2] - pts[i0]).normalized();
  std::size_t i3 = i0;
  best = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (double d = std::abs((pts[i] - pts[i0]).dot(pn)); d > best) best = d, i3 = i;
  if (best <= eps * 10) return std::nullopt;

  struct Face {
    std::array<std::size_t, 3> v;
    Vec3 n;
    double d;
    bool alive = true;
  };
  std::vector<Face> faces;
  const Vec3 inner = 0.25 * (pts[i0] + pts[i1] + pts[i2] + pts[i3]);
  auto make_face = [&](std::size_t a, std::size_t b, std::size_t c) {
    Vec3 n = (pts[b] - pts[a]).cross(pts[c] - pts[a]).normalized();
    if (n.dot(pts[a] - inner) < 0.0) {
      std::swap(b, c);
      n = -n;
    }
    faces.push_back(Face{{a, b, c}, n, n.dot(pts[a])});
  };
  make_face(i0, i1, i2);
  make_face(i0, i1, i3);
  make_face(i0, i2, i3);
  make_face(i1, i2, i3);

  std::vector<char> visible;
  for (std::size_t p = 0; p < pts.size(); ++p) {
    if (p == i0 || p == i1 || p == i2 || p == i3) continue;
    visible.assign(faces.size(), 0);
    bool any = false;
    for (std::size_t f = 0; f < faces.size(); ++f) {
      if (faces[f].alive && faces[f].n.dot(pts[p]) - faces[f].d > eps) {
        visible[f] = 1;
        any = true;
      }
    }
    if (!any) continue;
    std::map<std::pair<std::size_t, std::size_t>, int> edges;
    for (std::size_t f = 0; f < faces.size(); ++f) {
      if (!visible[f]) continue;
      const auto& v = faces[f].v;
      for (int e = 0; e < 3; ++e) edges[{v[e], v[(e + 1) % 3]}] += 1;
    }
    std::vector<std::pair<std::size_t, std::size_t>> horizon;
    for (const auto& [e, cnt] : edges)
      if (!edges.contains({e.second, e.first})) horizon.push_back(e);
    for (std::size_t f = 0; f < faces.size(); ++f)
      if (visible[f]) faces[f].alive = false;
    for (const auto& [a, b] : horizon) {
      const Vec3 n = (pts[b] - pts[a]).cross(pts[p] - pts[a]);
      const double len = n.norm();
      if (!(len > 0.0)) continue;
      faces.push_back(Face{{a, b, p}, n / len, (n / len).dot(pts[a])});
    }
  }

  ConvexHull hull;
  std::map<std::size_t, std::uint32_t> remap;
  for (const auto& f : faces) {
    if (!f.alive) continue;
    std::array<std::uint32_t, 3> tri{};
    for (int k = 0; k < 3; ++k) {
      auto [it, inserted] = remap.try_emplace(f.v[k], static_cast<std::uint32_t>(hull.vertices.size()));
      if (inserted) hull.vertices.push_back(pts[f.v[k]]);
      tri[k] = it->second;
    }
    hull.faces.push_back(tri);
    bool dup = false;
    for (const auto& pl : hull.planes)
      if (pl.normal.dot(f.n) > 1.0 - 1e-9 && std::abs(pl.offset - f.d) <= 1e-6 * scale) dup = true;
    if (!dup) hull.planes.push_back(Plane{f.n, f.d});
  }
  for (const auto& pl : hull.planes) {
    std::vector<std::uint32_t> loop;
    Vec3 c = Vec3::Zero();
    for (std::uint32_t i = 0; i < hull.vertices.size(); ++i)
      if (std::abs(pl.signed_distance(hull.vertices[i])) <= 1e-6 * scale) {
        loop.push_back(i);
        c += hull.vertices[i];
      }
    c /= static_cast<double>(std::max<std::size_t>(loop.size(), 1));
    const Vec3 e1 = pl.normal.unitOrthogonal(), e2 = pl.normal.cross(e1);
    std::sort(loop.begin(), loop.end(), [&](std::uint32_t a, std::uint32_t b) {
      const Vec3 da = hull.vertices[a] - c, db = hull.vertices[b] - c;
      return std::atan2(da.dot(e2), da.dot(e1)) < std::atan2(db.dot(e2), db.dot(e1));
    });
    hull.polygons.push_back(std::move(loop));
  }
  return hull;
}

/// Volume, centroid and inertia tensor of a closed outward-oriented hull at uniform density,
/// scaled to `mass`.
inline MassProperties mass_properties(const ConvexHull& hull, double mass) {
  double vol = 0.0;
  Vec3 first = Vec3::Zero();
  Mat3 second = Mat3::Zero();  // integral of x x^T over the volume
  for (const auto& f : hull.faces) {
    const Vec3& a = hull.vertices[f[0]];
    const Vec3& b = hull.vertices[f[1]];
    const Vec3& c = hull.vertices[f[2]];
    const double det = a.dot(b.cross(c));
    vol += det / 6.0;
    first += det / 24.0 * (a + b + c);
    const Vec3 s = a + b + c;
    second += det / 120.0 * (a * a.transpose() + b * b.transpose() + c * c.transpose() + s * s.transpose());
  }
  MassProperties mp;
  mp.volume = vol;
  if (!(vol > 0.0)) return mp;
  mp.center = first / vol;
  const double density = mass / vol;
  const Mat3 cov = density * second - mass * mp.center * mp.center.transpose();
  mp.inertia = cov.trace() * Mat3::Identity() - cov;
  return mp;
}

}  // namespace verefine
