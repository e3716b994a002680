#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "verefine/geometry.hpp"

namespace verefine {

inline constexpr int kBackground = -1;

/// Triangles with a vertex closer than this to the camera plane are skipped.
inline constexpr double kNearPlane = 1e-3;

struct RenderInstance {
  const TriangleMesh* mesh = nullptr;
  Pose pose;
  int id = 0;
};

/// Per-pixel camera-frame depth (0 = no hit), unit normal facing the camera, and instance id.
struct RenderBuffer {
  DepthImage depth;
  NormalImage normal;
  Image<int> instance;

  RenderBuffer() = default;
  explicit RenderBuffer(const CameraIntrinsics& k)
      : depth(k.width, k.height, 0.0), normal(k.width, k.height, Vec3::Zero()), instance(k.width, k.height, kBackground) {}

  int width() const { return depth.width(); }
  int height() const { return depth.height(); }
  bool hit(std::size_t i) const { return depth[i] > 0.0; }

  std::size_t hit_count() const {
    std::size_t n = 0;
    for (double d : depth.data()) n += d > 0.0;
    return n;
  }
};

namespace detail {

struct ScreenVertex {
  double x, y, inv_z;
  Vec3 normal_over_z;
};

inline double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

/// Top-left rule for a positively oriented triangle in y-down image coordinates.
inline bool is_top_left(const ScreenVertex& a, const ScreenVertex& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  return (dy == 0.0 && dx > 0.0) || dy < 0.0;
}

inline void raster_triangle(ScreenVertex a, ScreenVertex b, ScreenVertex c, int id, const CameraIntrinsics& k,
                            RenderBuffer& out) {
  double area = edge(a.x, a.y, b.x, b.y, c.x, c.y);
  if (area == 0.0 || !std::isfinite(area)) return;
  if (area < 0.0) {
    std::swap(b, c);
    area = -area;
  }
  const double minx = std::min({a.x, b.x, c.x}), maxx = std::max({a.x, b.x, c.x});
  const double miny = std::min({a.y, b.y, c.y}), maxy = std::max({a.y, b.y, c.y});
  const int u0 = std::max(0, static_cast<int>(std::ceil(minx - 0.5)));
  const int u1 = std::min(k.width - 1, static_cast<int>(std::floor(maxx - 0.5)));
  const int v0 = std::max(0, static_cast<int>(std::ceil(miny - 0.5)));
  const int v1 = std::min(k.height - 1, static_cast<int>(std::floor(maxy - 0.5)));
  if (u0 > u1 || v0 > v1) return;

  const bool tl_a = is_top_left(b, c), tl_b = is_top_left(c, a), tl_c = is_top_left(a, b);
  const double inv_area = 1.0 / area;
  for (int v = v0; v <= v1; ++v) {
    const double py = v + 0.5;
    for (int u = u0; u <= u1; ++u) {
      const double px = u + 0.5;
      const double wa = edge(b.x, b.y, c.x, c.y, px, py);
      const double wb = edge(c.x, c.y, a.x, a.y, px, py);
      const double wc = edge(a.x, a.y, b.x, b.y, px, py);
      if (wa < 0.0 || wb < 0.0 || wc < 0.0) continue;
      if ((wa == 0.0 && !tl_a) || (wb == 0.0 && !tl_b) || (wc == 0.0 && !tl_c)) continue;
      const double la = wa * inv_area, lb = wb * inv_area, lc = wc * inv_area;
      const double inv_z = la * a.inv_z + lb * b.inv_z + lc * c.inv_z;
      const double z = 1.0 / inv_z;
      const std::size_t i = out.depth.index(u, v);
      const double current = out.depth[i];
      if (current > 0.0 && z >= current) continue;
      Vec3 n = la * a.normal_over_z + lb * b.normal_over_z + lc * c.normal_over_z;
      const double len = n.norm();
      if (!(len > 0.0)) continue;
      n /= len;
      // Backfaces are drawn too; their normals are turned toward the camera.
      const Vec3 ray((px - k.cx) / k.fx, (py - k.cy) / k.fy, 1.0);
      if (n.dot(ray) > 0.0) n = -n;
      out.depth[i] = z;
      out.normal[i] = n;
      out.instance[i] = id;
    }
  }
}

}  // namespace detail

/// Z-buffered, perspective-correct rasterization of all instances. Pixel centers sit at
/// integer + 0.5; ties on shared edges follow the top-left rule. No culling.
inline RenderBuffer render(std::span<const RenderInstance> instances, const CameraIntrinsics& k) {
  if (!k.is_valid()) throw std::invalid_argument("render: invalid intrinsics");
  RenderBuffer out(k);
  std::vector<detail::ScreenVertex> screen;
  std::vector<bool> usable;
  for (const auto& inst : instances) {
    if (inst.mesh == nullptr) throw std::invalid_argument("render: null mesh");
    const TriangleMesh& mesh = *inst.mesh;
    screen.resize(mesh.vertices.size());
    usable.assign(mesh.vertices.size(), false);
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      const Vec3 p = inst.pose * mesh.vertices[i];
      if (!(p.z() > kNearPlane)) continue;
      const double iz = 1.0 / p.z();
      screen[i] = {k.fx * p.x() * iz + k.cx, k.fy * p.y() * iz + k.cy, iz, (inst.pose.rotation * mesh.normals[i]) * iz};
      usable[i] = true;
    }
    for (const auto& t : mesh.triangles) {
      if (!usable[t[0]] || !usable[t[1]] || !usable[t[2]]) continue;
      detail::raster_triangle(screen[t[0]], screen[t[1]], screen[t[2]], inst.id, k, out);
    }
  }
  return out;
}

inline RenderBuffer render(const TriangleMesh& mesh, const Pose& pose, const CameraIntrinsics& k, int id = 0) {
  const RenderInstance inst{&mesh, pose, id};
  return render(std::span<const RenderInstance>(&inst, 1), k);
}

struct ReduceResult {
  double sum = 0.0;
  std::size_t count = 0;
};

/// Sum and count of the valid entries. Reduces in fixed-size tiles and then over the tile
/// partials, the CPU counterpart of reading back a coarse mipmap level.
inline ReduceResult reduce_sums(std::span<const double> values, std::span<const std::uint8_t> valid) {
  if (values.size() != valid.size()) throw std::invalid_argument("reduce_sums: size mismatch");
  constexpr std::size_t kTile = 256;
  ReduceResult total;
  for (std::size_t base = 0; base < values.size(); base += kTile) {
    const std::size_t end = std::min(values.size(), base + kTile);
    double partial = 0.0;
    std::size_t count = 0;
    for (std::size_t i = base; i < end; ++i) {
      if (valid[i]) {
        partial += values[i];
        ++count;
      }
    }
    total.sum += partial;
    total.count += count;
  }
  return total;
}

}  // namespace verefine
