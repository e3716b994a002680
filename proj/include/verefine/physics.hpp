#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include "verefine/convex_hull.hpp"
#include "verefine/geometry.hpp"

namespace verefine {

inline constexpr double kGravity = 9.81;

struct SimParams {
  double timestep = 1.0 / 60.0;
  int solver_iterations = 10;
  int substeps = 4;
  double mass = 1.0;
  int settle_steps = 60;
  double friction = 0.5;
  double baumgarte = 0.2;
  double restitution = 0.0;          // informational; the solver is fully inelastic
  double penetration_slop = 2e-4;    // meters tolerated before positional correction
  double contact_margin = 5e-3;      // speculative contact distance
  double divergence_speed = 10.0;    // m/s

  void validate() const {
    if (!(timestep > 0.0) || solver_iterations < 1 || substeps < 1 || !(mass > 0.0) || settle_steps < 1)
      throw std::invalid_argument("SimParams: all parameters must be positive");
  }
};

/// Convex collision proxy of a mesh in its object frame, with uniform-density mass properties.
struct CollisionShape {
  ConvexHull hull;
  Vec3 center_of_mass = Vec3::Zero();
  Mat3 inertia = Mat3::Identity();  // about the center of mass, object-frame axes
  double mass = 1.0;
  double volume = 0.0;
};

/// Throws std::invalid_argument for flat or zero-volume meshes.
inline CollisionShape make_collision_shape(const TriangleMesh& mesh, double mass = 1.0) {
  mesh.validate();
  auto hull = convex_hull(mesh.vertices);
  if (!hull) throw std::invalid_argument("make_collision_shape: mesh is flat or degenerate");
  const auto mp = mass_properties(*hull, mass);
  if (!(mp.volume > 0.0)) throw std::invalid_argument("make_collision_shape: zero-volume hull");
  CollisionShape s;
  s.hull = std::move(*hull);
  s.center_of_mass = mp.center;
  s.inertia = mp.inertia;
  s.mass = mass;
  s.volume = mp.volume;
  return s;
}

struct FixedBody {
  std::shared_ptr<const CollisionShape> shape;
  Pose pose;
};

struct SimEnv {
  Plane support;
  std::vector<FixedBody> fixed_bodies;
  SimParams params;

  Vec3 gravity() const { return -kGravity * support.normal; }
};

struct SettleResult {
  Pose pose;
  bool diverged = false;
  int steps_run = 0;
  std::vector<double> energy;   // mechanical energy after each step (potential relative to the plane)
  std::vector<double> kinetic;  // kinetic energy after each step
};

namespace detail {

/// A hull placed in the world: vertices, face planes and face polygons.
struct PlacedHull {
  std::vector<Vec3> vertices;
  std::vector<Plane> planes;
  const std::vector<std::vector<std::uint32_t>>* polygons = nullptr;

  PlacedHull(const ConvexHull& hull, const Pose& pose) : polygons(&hull.polygons) {
    vertices.reserve(hull.vertices.size());
    for (const auto& v : hull.vertices) vertices.push_back(pose * v);
    planes.reserve(hull.planes.size());
    for (const auto& p : hull.planes) planes.push_back(p.transformed(pose));
  }

  double support_min(const Vec3& n) const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& v : vertices) m = std::min(m, n.dot(v));
    return m;
  }
  double support_max(const Vec3& n) const {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& v : vertices) m = std::max(m, n.dot(v));
    return m;
  }
  std::vector<Vec3> polygon(std::size_t face) const {
    std::vector<Vec3> out;
    for (auto i : (*polygons)[face]) out.push_back(vertices[i]);
    return out;
  }
};

struct Contact {
  Vec3 point;
  Vec3 normal;        // from the environment into the free body
  double separation;  // negative when penetrating
};

/// Best separating face axis between a free body `a` and a fixed hull `b`.
struct Separation {
  double distance = -std::numeric_limits<double>::infinity();
  Vec3 axis = Vec3::UnitZ();  // points from b into a
  bool reference_on_fixed = true;
  std::size_t face = 0;
};

inline Separation separating_axis(const PlacedHull& a, const PlacedHull& b) {
  Separation best;
  for (std::size_t f = 0; f < b.planes.size(); ++f) {
    const auto& pl = b.planes[f];
    const double s = a.support_min(pl.normal) - pl.offset;
    if (s > best.distance) best = {s, pl.normal, true, f};
  }
  for (std::size_t f = 0; f < a.planes.size(); ++f) {
    const auto& pl = a.planes[f];
    const double s = b.support_min(pl.normal) - pl.offset;
    if (s > best.distance) best = {s, -pl.normal, false, f};
  }
  return best;
}

inline void plane_contacts(const PlacedHull& body, const Plane& plane, double margin, std::vector<Contact>& out) {
  for (const auto& v : body.vertices) {
    const double s = plane.signed_distance(v);
    if (s < margin) out.push_back({v, plane.normal, s});
  }
}

/// Keeps the part of `poly` with (p - origin) . n <= 0.
inline std::vector<Vec3> clip(const std::vector<Vec3>& poly, const Vec3& origin, const Vec3& n) {
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec3& a = poly[i];
    const Vec3& b = poly[(i + 1) % poly.size()];
    const double da = (a - origin).dot(n), db = (b - origin).dot(n);
    if (da <= 0.0) out.push_back(a);
    if ((da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0)) out.push_back(a + (b - a) * (da / (da - db)));
  }
  return out;
}

/// Reference face (owner of the separating axis) against the most anti-parallel incident face
/// of the other hull, clipped to the reference face's side planes.
inline void hull_contacts(const PlacedHull& body, const PlacedHull& fixed, double margin, std::vector<Contact>& out) {
  const Separation sep = separating_axis(body, fixed);
  if (sep.distance > margin) return;
  const PlacedHull& ref = sep.reference_on_fixed ? fixed : body;
  const PlacedHull& inc = sep.reference_on_fixed ? body : fixed;
  const Plane& ref_plane = ref.planes[sep.face];
  std::size_t inc_face = 0;
  double most = std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < inc.planes.size(); ++f)
    if (const double d = inc.planes[f].normal.dot(ref_plane.normal); d < most) most = d, inc_face = f;
  std::vector<Vec3> poly = inc.polygon(inc_face);
  const std::vector<Vec3> ref_poly = ref.polygon(sep.face);
  for (std::size_t i = 0; i < ref_poly.size() && !poly.empty(); ++i) {
    const Vec3& a = ref_poly[i];
    const Vec3& b = ref_poly[(i + 1) % ref_poly.size()];
    poly = clip(poly, a, (b - a).cross(ref_plane.normal));
  }
  for (const auto& p : poly) {
    const double s = ref_plane.signed_distance(p);
    if (s >= margin) continue;
    if (sep.reference_on_fixed) out.push_back({p, ref_plane.normal, s});
    else out.push_back({p - s * ref_plane.normal, -ref_plane.normal, s});
  }
}

struct Body {
  Vec3 x;     // center of mass
  Mat3 r;     // orientation
  Vec3 v = Vec3::Zero();
  Vec3 w = Vec3::Zero();

  Pose pose(const CollisionShape& s) const { return Pose{r, x - r * s.center_of_mass}; }
};

inline std::pair<Vec3, Vec3> tangent_basis(const Vec3& n) {
  const Vec3 ref = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 t1 = n.cross(ref).normalized();
  return {t1, n.cross(t1)};
}

}  // namespace detail

/// Contact points of a posed shape against the plane and all fixed bodies.
inline std::vector<detail::Contact> find_contacts(const SimEnv& env, const CollisionShape& shape, const Pose& pose,
                                                  double margin) {
  std::vector<detail::Contact> contacts;
  const detail::PlacedHull body(shape.hull, pose);
  detail::plane_contacts(body, env.support, margin, contacts);
  for (const auto& fb : env.fixed_bodies) {
    if (!fb.shape) continue;
    detail::hull_contacts(body, detail::PlacedHull(fb.shape->hull, fb.pose), margin, contacts);
  }
  return contacts;
}

/// Deepest penetration of the posed shape into the plane or any fixed body (0 when separated).
inline double max_penetration(const SimEnv& env, const CollisionShape& shape, const Pose& pose) {
  const detail::PlacedHull body(shape.hull, pose);
  double pen = std::max(0.0, -body.support_min(env.support.normal) + env.support.offset);
  for (const auto& fb : env.fixed_bodies) {
    if (!fb.shape) continue;
    pen = std::max(pen, -detail::separating_axis(body, detail::PlacedHull(fb.shape->hull, fb.pose)).distance);
  }
  return pen;
}

/// Mechanical energy of a body state: kinetic plus potential relative to the support plane.
inline double mechanical_energy(const SimEnv& env, const CollisionShape& shape, const Vec3& com, const Vec3& v,
                                const Vec3& w_world, const Mat3& r) {
  const Mat3 iw = r * shape.inertia * r.transpose();
  const double ke = 0.5 * shape.mass * v.squaredNorm() + 0.5 * w_world.dot(iw * w_world);
  return ke + shape.mass * kGravity * env.support.signed_distance(com);
}

/// Drops the shape from rest at `pose` under gravity for params.settle_steps fixed steps:
/// semi-implicit Euler, sequential impulses with Coulomb friction and Baumgarte correction,
/// no restitution. Stops early and flags divergence when the body exceeds the divergence speed.
inline SettleResult settle(const SimEnv& env, const CollisionShape& shape, const Pose& pose) {
  const SimParams& p = env.params;
  p.validate();
  const double h = p.timestep / p.substeps;
  const Vec3 g = env.gravity();
  const double inv_mass = 1.0 / shape.mass;
  const Mat3 inv_inertia_body = shape.inertia.inverse();

  detail::Body body{pose * shape.center_of_mass, pose.rotation};
  SettleResult res;
  res.pose = pose;

  struct Row {
    Vec3 r, n, t1, t2;
    double k_n, k_t1, k_t2, target;
    double ln = 0.0, lt1 = 0.0, lt2 = 0.0;
  };
  std::vector<Row> rows;

  for (int step = 0; step < p.settle_steps; ++step) {
    for (int sub = 0; sub < p.substeps; ++sub) {
      body.v += g * h;
      const Mat3 inv_iw = body.r * inv_inertia_body * body.r.transpose();
      const auto contacts = find_contacts(env, shape, body.pose(shape), p.contact_margin);
      rows.clear();
      for (const auto& c : contacts) {
        Row row;
        row.r = c.point - body.x;
        row.n = c.normal;
        std::tie(row.t1, row.t2) = detail::tangent_basis(c.normal);
        auto eff = [&](const Vec3& dir) {
          const Vec3 rn = row.r.cross(dir);
          return 1.0 / (inv_mass + rn.dot(inv_iw * rn));
        };
        row.k_n = eff(row.n);
        row.k_t1 = eff(row.t1);
        row.k_t2 = eff(row.t2);
        const double pen = -c.separation;
        row.target = c.separation >= 0.0 ? -c.separation / h : p.baumgarte * std::max(0.0, pen - p.penetration_slop) / h;
        rows.push_back(row);
      }
      for (int it = 0; it < p.solver_iterations; ++it) {
        for (auto& row : rows) {
          auto apply = [&](const Vec3& impulse) {
            body.v += inv_mass * impulse;
            body.w += inv_iw * row.r.cross(impulse);
          };
          const double vn = (body.v + body.w.cross(row.r)).dot(row.n);
          const double ln = std::max(0.0, row.ln + (row.target - vn) * row.k_n);
          apply((ln - row.ln) * row.n);
          row.ln = ln;

          const double limit = p.friction * row.ln;
          const double vt1 = (body.v + body.w.cross(row.r)).dot(row.t1);
          const double lt1 = std::clamp(row.lt1 - vt1 * row.k_t1, -limit, limit);
          apply((lt1 - row.lt1) * row.t1);
          row.lt1 = lt1;
          const double vt2 = (body.v + body.w.cross(row.r)).dot(row.t2);
          const double lt2 = std::clamp(row.lt2 - vt2 * row.k_t2, -limit, limit);
          apply((lt2 - row.lt2) * row.t2);
          row.lt2 = lt2;
        }
      }
      body.x += body.v * h;
      const double wn = body.w.norm();
      if (wn > 0.0) body.r = rotation_about(body.w / wn, wn * h) * body.r;
      if (Pose{body.r, Vec3::Zero()}.orthonormality_drift() > 1e-9) body.r = nearest_rotation(body.r);
    }
    const double ke = 0.5 * shape.mass * body.v.squaredNorm() +
                      0.5 * body.w.dot(body.r * shape.inertia * body.r.transpose() * body.w);
    res.kinetic.push_back(ke);
    res.energy.push_back(mechanical_energy(env, shape, body.x, body.v, body.w, body.r));
    res.steps_run = step + 1;
    double max_speed = body.v.norm();
    for (const auto& hv : shape.hull.vertices)
      max_speed = std::max(max_speed, (body.v + body.w.cross(body.r * (hv - shape.center_of_mass))).norm());
    if (!std::isfinite(max_speed) || max_speed > p.divergence_speed) {
      res.diverged = true;
      break;
    }
    res.pose = body.pose(shape);
  }
  return res;
}

/// Adopts the simulated orientation and keeps the current translation.
inline Pose rotation_only_update(const Pose& current, const Pose& simulated) {
  return Pose{simulated.rotation, current.translation};
}

}  // namespace verefine
