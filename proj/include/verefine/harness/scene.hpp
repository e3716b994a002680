#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "verefine/geometry.hpp"
#include "verefine/harness/mesh_zoo.hpp"
#include "verefine/harness/metrics.hpp"
#include "verefine/io.hpp"
#include "verefine/physics.hpp"
#include "verefine/renderer.hpp"
#include "verefine/verification.hpp"

namespace verefine {

/// A mesh with its collision proxy and declared symmetry. Named either by a zoo kind or by
/// "obj:<path>".
struct ObjectModel {
  std::string name;
  std::shared_ptr<const TriangleMesh> mesh;
  std::shared_ptr<const CollisionShape> shape;
  SymmetryGroup symmetry;

  static ObjectModel from_name(const std::string& name, double mass = 1.0) {
    ObjectModel m;
    m.name = name;
    if (name.rfind("obj:", 0) == 0) {
      m.mesh = std::make_shared<const TriangleMesh>(io::read_obj(name.substr(4)));
    } else {
      const auto kind = zoo::kind_from_string(name);
      m.mesh = std::make_shared<const TriangleMesh>(zoo::make(kind));
      m.symmetry = zoo::symmetry(kind);
    }
    m.shape = std::make_shared<const CollisionShape>(make_collision_shape(*m.mesh, mass));
    return m;
  }
};

/// Builds each named model once.
class ModelLibrary {
 public:
  explicit ModelLibrary(double mass = 1.0) : mass_(mass) {}

  const ObjectModel& get(const std::string& name) {
    auto it = models_.find(name);
    if (it == models_.end()) it = models_.emplace(name, ObjectModel::from_name(name, mass_)).first;
    return it->second;
  }

 private:
  double mass_;
  std::map<std::string, ObjectModel> models_;
};

enum class Layout { isolated, pair_stack, triple_stack, clutter };

inline std::string to_string(Layout l) {
  switch (l) {
    case Layout::isolated: return "isolated";
    case Layout::pair_stack: return "pair-stack";
    case Layout::triple_stack: return "triple-stack";
    case Layout::clutter: return "clutter";
  }
  return "?";
}

struct LayoutSpec {
  Layout layout = Layout::isolated;
  int clutter_count = 3;                                              // k of clutter-k
  std::vector<std::string> kinds{"box", "cylinder", "wedge", "l_shape"};
  std::vector<std::string> base_kinds{"box"};                         // stack supports
  double camera_distance = 0.6;
  double camera_elevation_deg = 50.0;
  double table_size = 1.0;

  /// Parses "isolated", "pair-stack", "triple-stack" or "clutter-<k>".
  static LayoutSpec parse(const std::string& s) {
    LayoutSpec spec;
    if (s == "isolated") spec.layout = Layout::isolated;
    else if (s == "pair-stack") spec.layout = Layout::pair_stack;
    else if (s == "triple-stack") spec.layout = Layout::triple_stack;
    else if (s.rfind("clutter-", 0) == 0) {
      spec.layout = Layout::clutter;
      try {
        spec.clutter_count = std::stoi(s.substr(8));
      } catch (const std::exception&) {
        throw std::invalid_argument("bad clutter count in layout '" + s + "'");
      }
      if (spec.clutter_count < 1) throw std::invalid_argument("clutter count must be >= 1");
    } else {
      throw std::invalid_argument("unknown layout '" + s + "'");
    }
    return spec;
  }

  std::string name() const {
    return layout == Layout::clutter ? "clutter-" + std::to_string(clutter_count) : to_string(layout);
  }
};

/// Objects resting on a table (world z = 0), seen by one camera. All poses and the plane are
/// camera-frame.
struct SyntheticScene {
  std::string layout;
  std::uint64_t seed = 0;
  std::vector<ObjectModel> models;
  std::vector<Pose> truth;
  CameraIntrinsics intrinsics;
  Pose extrinsic;  // world -> camera
  Plane support;
  Observation observation;

  std::size_t size() const { return truth.size(); }
};

struct SceneError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline TriangleMesh table_mesh(double size) {
  TriangleMesh m;
  const double h = size / 2;
  m.vertices = {{-h, -h, 0}, {h, -h, 0}, {h, h, 0}, {-h, h, 0}};
  m.normals.assign(4, Vec3::UnitZ());
  m.triangles = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

/// World-to-camera pose of a camera on a circle around the origin looking at `target`.
inline Pose look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(Vec3::UnitZ());
  if (x.norm() < 1e-9) x = Vec3::UnitX();
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  return Pose{r, -(r * eye)};
}

inline double pose_change_deg(const Pose& a, const Pose& b) { return rotation_distance_deg(a, b); }

/// Repeats settle until the pose stops moving; nullopt on divergence or no convergence.
inline std::optional<Pose> rest(const SimEnv& env, const CollisionShape& shape, Pose pose, int rounds = 12) {
  for (int i = 0; i < rounds; ++i) {
    const SettleResult r = settle(env, shape, pose);
    if (r.diverged) return std::nullopt;
    const double dt = translation_distance(r.pose, pose), dr = pose_change_deg(r.pose, pose);
    pose = r.pose;
    if (dt < 2e-5 && dr < 0.02) return pose;
  }
  return std::nullopt;
}

/// Random orientation with a random hull face pointing down and random yaw.
inline Mat3 resting_orientation(const CollisionShape& shape, Rng& rng) {
  std::uniform_int_distribution<std::size_t> face(0, shape.hull.planes.size() - 1);
  const Vec3 n = shape.hull.planes[face(rng)].normal;
  const Mat3 down = Eigen::Quaterniond::FromTwoVectors(n, -Vec3::UnitZ()).toRotationMatrix();
  std::uniform_real_distribution<double> yaw(0.0, 2.0 * std::numbers::pi);
  return nearest_rotation(rotation_about(Vec3::UnitZ(), yaw(rng)) * down);
}

/// Translation that puts the lowest hull vertex `gap` above height `floor_z` with the shape's
/// center of mass over `xy`.
inline Pose place_over(const CollisionShape& shape, const Mat3& r, const Eigen::Vector2d& xy, double floor_z,
                       double gap) {
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& v : shape.hull.vertices) lo = std::min(lo, (r * v).z());
  const Vec3 com = r * shape.center_of_mass;
  return Pose{r, Vec3(xy.x() - com.x(), xy.y() - com.y(), floor_z - lo + gap)};
}

inline double footprint_radius(const CollisionShape& shape, const Pose& pose) {
  const Vec3 c = pose * shape.center_of_mass;
  double r = 0.0;
  for (const auto& v : shape.hull.vertices) {
    const Vec3 p = pose * v;
    r = std::max(r, std::hypot(p.x() - c.x(), p.y() - c.y()));
  }
  return r;
}

inline double top_height(const CollisionShape& shape, const Pose& pose) {
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& v : shape.hull.vertices) hi = std::max(hi, (pose * v).z());
  return hi;
}

/// Fixed-point check of a rest pose: one more settle moves it by less than 1mm / 1 degree.
inline bool at_rest(const SimEnv& env, const CollisionShape& shape, const Pose& pose) {
  const SettleResult r = settle(env, shape, pose);
  return !r.diverged && translation_distance(r.pose, pose) < 1e-3 && pose_change_deg(r.pose, pose) < 1.0;
}

inline std::optional<std::vector<Pose>> try_layout(const LayoutSpec& spec, const std::vector<ObjectModel>& models,
                                                   const SimParams& params, Rng& rng) {
  SimEnv env;
  env.params = params;
  std::uniform_real_distribution<double> offset(-0.03, 0.03);
  std::vector<Pose> world;
  const bool stack = spec.layout == Layout::pair_stack || spec.layout == Layout::triple_stack;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const CollisionShape& shape = *models[i].shape;
    Pose start;
    if (stack && i > 0) {
      std::uniform_real_distribution<double> small(-0.008, 0.008);
      const Pose& below = world.back();
      const Vec3 c = below * models[i - 1].shape->center_of_mass;
      std::uniform_real_distribution<double> yaw(0.0, 2.0 * std::numbers::pi);
      const Mat3 r = (i + 1 < models.size()) ? rotation_about(Vec3::UnitZ(), yaw(rng))
                                             : resting_orientation(shape, rng);
      start = place_over(shape, r, Eigen::Vector2d(c.x() + small(rng), c.y() + small(rng)),
                         top_height(*models[i - 1].shape, below), 1e-3);
    } else {
      const Mat3 r = stack ? rotation_about(Vec3::UnitZ(), std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng))
                           : resting_orientation(shape, rng);
      const double spread = spec.layout == Layout::clutter ? 0.12 : 0.03;
      std::uniform_real_distribution<double> pos(-spread, spread);
      start = place_over(shape, r, Eigen::Vector2d(pos(rng), pos(rng)), 0.0, 1e-3);
      if (spec.layout == Layout::clutter) {
        const Vec3 c = start * shape.center_of_mass;
        const double rad = footprint_radius(shape, start);
        for (std::size_t j = 0; j < world.size(); ++j) {
          const Vec3 o = world[j] * models[j].shape->center_of_mass;
          if (std::hypot(c.x() - o.x(), c.y() - o.y()) < rad + footprint_radius(*models[j].shape, world[j]) + 0.03)
            return std::nullopt;
        }
      }
    }
    SimEnv local = env;
    if (stack && i > 0) local.fixed_bodies = {FixedBody{models[i - 1].shape, world.back()}};
    const auto rested = rest(local, shape, start);
    if (!rested || !at_rest(local, shape, *rested)) return std::nullopt;
    if (stack && i > 0) {
      // must still be on top of its support
      const double base_top = top_height(*models[i - 1].shape, world.back());
      if ((*rested * shape.center_of_mass).z() < base_top) return std::nullopt;
    }
    world.push_back(*rested);
  }
  return world;
}

}  // namespace detail

/// Renders objects (ids 0..N-1) and the table (id N) and builds exact per-object masks.
/// Normals come from the renderer.
inline Observation render_observation(const std::vector<ObjectModel>& models, const std::vector<Pose>& poses,
                                      const CameraIntrinsics& k, const Pose& extrinsic, double table_size = 1.0) {
  const TriangleMesh table = detail::table_mesh(table_size);
  std::vector<RenderInstance> inst;
  for (std::size_t i = 0; i < models.size(); ++i) inst.push_back({models[i].mesh.get(), poses[i], static_cast<int>(i)});
  inst.push_back({&table, extrinsic, static_cast<int>(models.size())});
  RenderBuffer r = render(inst, k);
  Observation obs;
  obs.intrinsics = k;
  obs.depth = std::move(r.depth);
  obs.normals = std::move(r.normal);
  for (std::size_t i = 0; i < models.size(); ++i) {
    Mask m(k.width, k.height, 0);
    for (std::size_t p = 0; p < m.size(); ++p) m[p] = r.instance[p] == static_cast<int>(i);
    obs.masks.push_back(std::move(m));
  }
  return obs;
}

namespace detail {
inline std::vector<std::string> draw_kinds(const LayoutSpec& spec, Rng& rng) {
  auto pick = [&](const std::vector<std::string>& from) {
    if (from.empty()) throw std::invalid_argument("layout: empty kind list");
    return from[std::uniform_int_distribution<std::size_t>(0, from.size() - 1)(rng)];
  };
  switch (spec.layout) {
    case Layout::isolated: return {pick(spec.kinds)};
    case Layout::pair_stack: return {pick(spec.base_kinds), pick(spec.kinds)};
    case Layout::triple_stack: return {pick(spec.base_kinds), pick(spec.base_kinds), pick(spec.kinds)};
    case Layout::clutter: {
      std::vector<std::string> k;
      for (int i = 0; i < spec.clutter_count; ++i) k.push_back(pick(spec.kinds));
      return k;
    }
  }
  return {};
}
}  // namespace detail

/// Places, settles and renders a scene. Throws SceneError after 100 failed placement attempts.
inline SyntheticScene generate_scene(const LayoutSpec& spec, std::uint64_t seed, ModelLibrary& library,
                                     const SimParams& params = {}, const CameraIntrinsics& k = {}) {
  Rng rng(seed);
  SyntheticScene scene;
  scene.layout = spec.name();
  scene.seed = seed;
  scene.intrinsics = k;
  std::uniform_real_distribution<double> azimuth(0.0, 2.0 * std::numbers::pi);
  const double el = deg2rad(spec.camera_elevation_deg), az = azimuth(rng);
  const Vec3 eye = spec.camera_distance * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
  scene.extrinsic = detail::look_at(eye, Vec3(0, 0, 0.03));
  scene.support = Plane{Vec3::UnitZ(), 0.0}.transformed(scene.extrinsic);

  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<ObjectModel> models;
    for (const auto& name : detail::draw_kinds(spec, rng)) models.push_back(library.get(name));
    const auto world = detail::try_layout(spec, models, params, rng);
    if (!world) continue;
    scene.models = std::move(models);
    for (const auto& w : *world) scene.truth.push_back(scene.extrinsic * w);
    scene.observation = render_observation(scene.models, scene.truth, k, scene.extrinsic, spec.table_size);
    return scene;
  }
  throw SceneError("generate_scene: layout '" + spec.name() + "' infeasible after 100 attempts");
}

// ---- Corruption -------------------------------------------------------------------------------

struct CorruptionSpec {
  double rotation_deg = 0.0;
  double translation_m = 0.0;
  double occlusion = 0.0;                 // fraction of each object's mask pixels
  std::optional<double> dropout_height;   // meters above the plane
  int pool_size = 5;

  void validate() const {
    if (!(rotation_deg >= 0.0) || !(translation_m >= 0.0))
      throw std::invalid_argument("CorruptionSpec: errors must be non-negative");
    if (!(occlusion >= 0.0 && occlusion < 1.0)) throw std::invalid_argument("CorruptionSpec: occlusion must be in [0, 1)");
    if (dropout_height && !(*dropout_height >= 0.0)) throw std::invalid_argument("CorruptionSpec: bad dropout height");
    if (pool_size < 1) throw std::invalid_argument("CorruptionSpec: pool_size must be >= 1");
  }
  bool is_zero() const { return rotation_deg == 0.0 && translation_m == 0.0 && occlusion == 0.0 && !dropout_height; }
};

struct CorruptedScene {
  Observation observation;
  std::vector<std::vector<Pose>> pools;      // per object
  std::vector<double> occluded_fraction;     // measured, per object
};

namespace detail {
inline void invalidate(Observation& obs, std::size_t p) {
  obs.depth[p] = 0.0;
  obs.normals[p] = Vec3::Zero();
}

/// Removes rectangular patches centered at uniformly drawn mask pixels until exactly
/// round(fraction * |mask|) of the mask's valid pixels are gone.
inline std::size_t occlude(Observation& obs, std::size_t object, double fraction, Rng& rng) {
  const Mask& mask = obs.masks[object];
  std::vector<std::size_t> pixels;
  for (std::size_t p = 0; p < mask.size(); ++p)
    if (mask[p] && depth_valid(obs.depth[p])) pixels.push_back(p);
  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pixels.size())));
  std::size_t removed = 0;
  const int w = mask.width(), h = mask.height();
  std::uniform_int_distribution<std::size_t> centre(0, pixels.empty() ? 0 : pixels.size() - 1);
  std::uniform_real_distribution<double> aspect(0.5, 2.0);
  for (int guard = 0; removed < target && guard < 100000; ++guard) {
    const double side = std::max(2.0, 0.5 * std::sqrt(static_cast<double>(target - removed)));
    const double a = aspect(rng);
    const int hw = std::max(1, static_cast<int>(side * std::sqrt(a) / 2)), hh = std::max(1, static_cast<int>(side / std::sqrt(a) / 2));
    const std::size_t c = pixels[centre(rng)];
    const int cu = static_cast<int>(c % w), cv = static_cast<int>(c / w);
    for (int v = std::max(0, cv - hh); v <= std::min(h - 1, cv + hh) && removed < target; ++v)
      for (int u = std::max(0, cu - hw); u <= std::min(w - 1, cu + hw) && removed < target; ++u) {
        const std::size_t p = mask.index(u, v);
        if (mask[p] && depth_valid(obs.depth[p])) {
          invalidate(obs, p);
          ++removed;
        }
      }
  }
  return removed;
}
}  // namespace detail

/// Perturbed hypothesis pools and a degraded observation. Every pool pose is at geodesic
/// distance rotation_deg and translation distance translation_m from the truth.
inline CorruptedScene corrupt(const SyntheticScene& scene, const CorruptionSpec& spec, Rng& rng) {
  spec.validate();
  CorruptedScene out;
  out.observation = scene.observation;
  for (const auto& t : scene.truth) {
    std::vector<Pose> pool;
    for (int j = 0; j < spec.pool_size; ++j) {
      Pose p = t;
      if (spec.rotation_deg > 0.0) p = perturb_rotation(p, spec.rotation_deg, rng);
      if (spec.translation_m > 0.0) p = perturb_translation(p, spec.translation_m, rng);
      pool.push_back(p);
    }
    out.pools.push_back(std::move(pool));
  }
  Observation& obs = out.observation;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const std::size_t before = count_set(obs.masks[i]);
    std::size_t removed = 0;
    if (spec.occlusion > 0.0) removed += detail::occlude(obs, i, spec.occlusion, rng);
    if (spec.dropout_height) {
      const Mask& m = obs.masks[i];
      for (int v = 0; v < m.height(); ++v)
        for (int u = 0; u < m.width(); ++u) {
          const std::size_t p = m.index(u, v);
          if (!m[p] || !depth_valid(obs.depth[p])) continue;
          if (scene.support.signed_distance(obs.intrinsics.backproject(u, v, obs.depth[p])) > *spec.dropout_height) {
            detail::invalidate(obs, p);
            ++removed;
          }
        }
    }
    out.occluded_fraction.push_back(before == 0 ? 0.0 : static_cast<double>(removed) / static_cast<double>(before));
  }
  return out;
}

// ---- Persistence ------------------------------------------------------------------------------

namespace detail {
inline nlohmann::json pose_to_json(const Pose& p) {
  nlohmann::json r = nlohmann::json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.push_back(p.rotation(i, j));
  return {{"R", r}, {"t", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

inline Pose pose_from_json(const nlohmann::json& j) {
  Pose p;
  const auto& r = j.at("R");
  const auto& t = j.at("t");
  if (r.size() != 9 || t.size() != 3) throw std::invalid_argument("pose: expected R[9] and t[3]");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) p.rotation(i, k) = r.at(i * 3 + k).get<double>();
  p.translation = Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
  if (!p.is_valid(1e-6)) throw std::invalid_argument("pose: rotation is not orthonormal");
  return p;
}
}  // namespace detail

inline nlohmann::json scene_to_json(const SyntheticScene& s) {
  nlohmann::json j;
  j["layout"] = s.layout;
  j["seed"] = s.seed;
  const auto& k = s.intrinsics;
  j["camera"] = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height},
                 {"extrinsic", detail::pose_to_json(s.extrinsic)}};
  j["support"] = {{"normal", {s.support.normal.x(), s.support.normal.y(), s.support.normal.z()}},
                  {"offset", s.support.offset}};
  j["objects"] = nlohmann::json::array();
  for (std::size_t i = 0; i < s.size(); ++i)
    j["objects"].push_back({{"id", i},
                            {"mesh", s.models[i].name},
                            {"symmetry", {{"cyclic_z", s.models[i].symmetry.cyclic_z}, {"flip_x", s.models[i].symmetry.flip_x}}},
                            {"pose", detail::pose_to_json(s.truth[i])}});
  return j;
}

/// Rebuilds a scene from JSON; the observation is re-rendered from the stored ground truth.
inline SyntheticScene scene_from_json(const nlohmann::json& j, ModelLibrary& library) {
  SyntheticScene s;
  s.layout = j.at("layout").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  const auto& c = j.at("camera");
  s.intrinsics = CameraIntrinsics{c.at("fx").get<double>(), c.at("fy").get<double>(), c.at("cx").get<double>(),
                                  c.at("cy").get<double>(), c.at("width").get<int>(), c.at("height").get<int>()};
  if (!s.intrinsics.is_valid()) throw std::invalid_argument("scene: invalid camera");
  s.extrinsic = detail::pose_from_json(c.at("extrinsic"));
  const auto& n = j.at("support").at("normal");
  s.support = Plane{Vec3(n[0].get<double>(), n[1].get<double>(), n[2].get<double>()).normalized(),
                    j.at("support").at("offset").get<double>()};
  for (const auto& o : j.at("objects")) {
    ObjectModel m = library.get(o.at("mesh").get<std::string>());
    if (o.contains("symmetry"))
      m.symmetry = SymmetryGroup{o["symmetry"].value("cyclic_z", 1), o["symmetry"].value("flip_x", false)};
    s.models.push_back(std::move(m));
    s.truth.push_back(detail::pose_from_json(o.at("pose")));
  }
  s.observation = render_observation(s.models, s.truth, s.intrinsics, s.extrinsic);
  return s;
}

inline void save_scene(const std::string& path, const SyntheticScene& s) {
  std::ofstream out(path);
  if (!out) throw io::IoError("cannot write " + path);
  out << scene_to_json(s).dump(2) << '\n';
}

inline SyntheticScene load_scene(const std::string& path, ModelLibrary& library) {
  std::ifstream in(path);
  if (!in) throw io::IoError("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw io::IoError(path + ": " + e.what());
  }
  return scene_from_json(j, library);
}

}  // namespace verefine
