#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "verefine/bandit.hpp"
#include "verefine/geometry.hpp"
#include "verefine/kdtree.hpp"
#include "verefine/physics.hpp"
#include "verefine/refinement.hpp"
#include "verefine/renderer.hpp"
#include "verefine/verification.hpp"

namespace verefine {

enum class Provenance { initial, simulated, refined };

struct ScoredPose {
  Pose pose;
  double score = 0.0;
  Provenance provenance = Provenance::initial;
};

struct Hypothesis {
  std::size_t object = 0;
  Pose pose;
  Provenance provenance = Provenance::initial;
  std::vector<ScoredPose> history;
};

/// The three per-object primitives the refinement loops are built from, bound to one object in
/// one simulation environment. `simulate` returns nullopt when the simulation diverged.
struct ObjectOps {
  std::function<std::optional<Pose>(const Pose&)> simulate;
  std::function<Pose(const Pose&)> refine;
  std::function<double(const Pose&)> score;
};

/// Refinement budget per object: pir_iterations refiner calls of inner_steps each.
struct Budget {
  int total_iterations = 50;
  int pir_iterations = 5;
  int inner_steps = 10;

  static Budget from_split(int pir_iterations, int inner_steps) {
    return Budget{pir_iterations * inner_steps, pir_iterations, inner_steps};
  }
  bool is_consistent() const {
    return pir_iterations >= 1 && inner_steps >= 1 && total_iterations == pir_iterations * inner_steps;
  }
};

// ---- PIR ------------------------------------------------------------------------------------

struct PirStep {
  Pose simulated;  // [R_sim, t_cur]
  Pose refined;
  bool diverged = false;
};

/// One physics-guided iteration: settle, keep only the simulated rotation, refine once.
inline PirStep pir_step(const ObjectOps& ops, const Pose& current) {
  PirStep s;
  const auto sim = ops.simulate(current);
  s.diverged = !sim.has_value();
  s.simulated = sim ? rotation_only_update(current, *sim) : current;
  s.refined = ops.refine(s.simulated);
  return s;
}

inline Hypothesis pir_iteration(const Hypothesis& h, const ObjectOps& ops) {
  Hypothesis out = h;
  out.pose = pir_step(ops, h.pose).refined;
  out.provenance = Provenance::refined;
  return out;
}

// ---- SIR ------------------------------------------------------------------------------------

/// Supervised refinement state of one hypothesis (one bandit arm).
class SirArm {
 public:
  SirArm(const Pose& initial, double initial_score) : current_{initial, initial_score, Provenance::initial} {
    history_.push_back(current_);
    best_ = 0;
  }

  const ScoredPose& current() const { return current_; }
  const ScoredPose& best() const { return history_[best_]; }
  const std::vector<ScoredPose>& history() const { return history_; }
  int iterations() const { return iterations_; }

  /// One PIR iteration scoring both halves; proceeds with the better one (the simulated
  /// estimate on ties) and returns its score.
  double step(const ObjectOps& ops) {
    const PirStep s = pir_step(ops, current_.pose);
    const ScoredPose sim{s.simulated, s.simulated == current_.pose ? current_.score : ops.score(s.simulated),
                         Provenance::simulated};
    const ScoredPose ref{s.refined, ops.score(s.refined), Provenance::refined};
    record(sim);
    record(ref);
    current_ = ref.score > sim.score ? ref : sim;
    ++iterations_;
    return current_.score;
  }

 private:
  void record(const ScoredPose& p) {
    history_.push_back(p);
    if (p.score > history_[best_].score) best_ = history_.size() - 1;
  }

  ScoredPose current_;
  std::vector<ScoredPose> history_;
  std::size_t best_ = 0;
  int iterations_ = 0;
};

/// Result of a single-object refinement strategy.
struct RefinementOutcome {
  Pose pose;
  double score = 0.0;
  std::size_t refiner_calls = 0;
  std::size_t chosen_arm = 0;
  std::vector<double> score_trace;  // reward / proceeded score per refiner call
  std::vector<std::size_t> pulls;   // refiner calls per arm
  std::vector<ScoredPose> evaluated;
  BanditTrace bandit;
};

namespace detail {
/// Counts refiner invocations made through `ops`.
inline ObjectOps counting(const ObjectOps& ops, std::size_t& calls) {
  ObjectOps c = ops;
  c.refine = [&calls, inner = ops.refine](const Pose& p) {
    ++calls;
    return inner(p);
  };
  return c;
}

inline void collect_best(const std::vector<SirArm>& arms, RefinementOutcome& out) {
  bool first = true;
  for (std::size_t j = 0; j < arms.size(); ++j) {
    const auto& b = arms[j].best();
    if (first || b.score > out.score) {
      out.pose = b.pose;
      out.score = b.score;
      out.chosen_arm = j;
      first = false;
    }
    out.evaluated.insert(out.evaluated.end(), arms[j].history().begin(), arms[j].history().end());
  }
}
}  // namespace detail

/// Supervised iterative refinement: returns the best-scoring estimate ever evaluated,
/// including the initial one.
inline RefinementOutcome sir(const Hypothesis& h, int iterations, const ObjectOps& ops) {
  if (iterations < 1) throw std::invalid_argument("sir: need at least one iteration");
  RefinementOutcome out;
  const ObjectOps counted = detail::counting(ops, out.refiner_calls);
  std::vector<SirArm> arms{SirArm(h.pose, counted.score(h.pose))};
  for (int i = 0; i < iterations; ++i) out.score_trace.push_back(arms[0].step(counted));
  out.pulls = {static_cast<std::size_t>(iterations)};
  detail::collect_best(arms, out);
  return out;
}

inline Hypothesis with_history(Hypothesis h, const RefinementOutcome& o) {
  h.pose = o.pose;
  h.provenance = o.evaluated.empty() ? Provenance::initial : Provenance::refined;
  for (const auto& e : o.evaluated)
    if (e.pose == o.pose) h.provenance = e.provenance;
  h.history = o.evaluated;
  return h;
}

// ---- RIR and reference allocators -------------------------------------------------------------

/// Regret-minimizing refinement over a hypothesis pool. Each arm starts with its initial score
/// as one observed reward; each pull is one SIR iteration rewarded with the proceeded score.
inline RefinementOutcome rir(std::span<const Pose> pool, int iterations, const ObjectOps& ops,
                             const BanditConfig& bandit_cfg = {0.5, 1.0}) {
  if (pool.empty()) throw std::invalid_argument("rir: empty pool");
  if (iterations < 1) throw std::invalid_argument("rir: need at least one iteration");
  RefinementOutcome out;
  const ObjectOps counted = detail::counting(ops, out.refiner_calls);
  BanditState bandit(pool.size(), bandit_cfg);
  std::vector<SirArm> arms;
  for (std::size_t j = 0; j < pool.size(); ++j) {
    const double s = counted.score(pool[j]);
    arms.emplace_back(pool[j], s);
    bandit.update(j, s);
  }
  out.pulls.assign(pool.size(), 0);
  for (int i = 0; i < iterations; ++i) {
    const std::size_t j = bandit.select();
    const double reward = arms[j].step(counted);
    bandit.update(j, reward);
    bandit.discount();
    out.bandit.record(j, reward);
    out.score_trace.push_back(reward);
    ++out.pulls[j];
  }
  detail::collect_best(arms, out);
  return out;
}

/// Refines all hypotheses round-robin with the same SIR iterations; selects the best score.
inline RefinementOutcome even(std::span<const Pose> pool, int iterations, const ObjectOps& ops) {
  if (pool.empty()) throw std::invalid_argument("even: empty pool");
  RefinementOutcome out;
  const ObjectOps counted = detail::counting(ops, out.refiner_calls);
  std::vector<SirArm> arms;
  for (const auto& p : pool) arms.emplace_back(p, counted.score(p));
  out.pulls.assign(pool.size(), 0);
  for (int i = 0; i < iterations; ++i) {
    const std::size_t j = static_cast<std::size_t>(i) % pool.size();
    out.score_trace.push_back(arms[j].step(counted));
    ++out.pulls[j];
  }
  detail::collect_best(arms, out);
  return out;
}

/// Spends the whole budget on the best-scoring initial hypothesis.
inline RefinementOutcome expl(std::span<const Pose> pool, int iterations, const ObjectOps& ops) {
  if (pool.empty()) throw std::invalid_argument("expl: empty pool");
  RefinementOutcome out;
  const ObjectOps counted = detail::counting(ops, out.refiner_calls);
  std::vector<SirArm> arms;
  std::size_t top = 0;
  for (std::size_t j = 0; j < pool.size(); ++j) {
    arms.emplace_back(pool[j], counted.score(pool[j]));
    if (arms[j].current().score > arms[top].current().score) top = j;
  }
  out.pulls.assign(pool.size(), 0);
  for (int i = 0; i < iterations; ++i) out.score_trace.push_back(arms[top].step(counted));
  out.pulls[top] = static_cast<std::size_t>(iterations);
  detail::collect_best(arms, out);
  return out;
}

namespace detail {
inline RefinementOutcome unsupervised(const Pose& start, std::size_t calls, Pose final_pose, const ObjectOps& ops,
                                      std::vector<double> trace) {
  RefinementOutcome out;
  out.pose = final_pose;
  out.score = ops.score(final_pose);
  out.refiner_calls = calls;
  out.pulls = {calls};
  out.score_trace = std::move(trace);
  out.evaluated = {ScoredPose{start, std::numeric_limits<double>::quiet_NaN(), Provenance::initial},
                   ScoredPose{final_pose, out.score, Provenance::refined}};
  return out;
}
}  // namespace detail

/// Physics-guided iterative refinement without supervision; returns the last T_ref.
inline RefinementOutcome pir(const Pose& initial, int iterations, const ObjectOps& ops) {
  Pose cur = initial;
  for (int i = 0; i < iterations; ++i) cur = pir_step(ops, cur).refined;
  return detail::unsupervised(initial, static_cast<std::size_t>(iterations), cur, ops, {});
}

/// The baseline refiner alone.
inline RefinementOutcome plain(const Pose& initial, int iterations, const ObjectOps& ops) {
  Pose cur = initial;
  for (int i = 0; i < iterations; ++i) cur = ops.refine(cur);
  return detail::unsupervised(initial, static_cast<std::size_t>(iterations), cur, ops, {});
}

/// One simulation adopting the full pose, then plain refinement.
inline RefinementOutcome phys_before(const Pose& initial, int iterations, const ObjectOps& ops) {
  Pose cur = ops.simulate(initial).value_or(initial);
  for (int i = 0; i < iterations; ++i) cur = ops.refine(cur);
  return detail::unsupervised(initial, static_cast<std::size_t>(iterations), cur, ops, {});
}

/// Plain refinement, then one simulation adopting the full pose.
inline RefinementOutcome phys_after(const Pose& initial, int iterations, const ObjectOps& ops) {
  Pose cur = initial;
  for (int i = 0; i < iterations; ++i) cur = ops.refine(cur);
  cur = ops.simulate(cur).value_or(cur);
  return detail::unsupervised(initial, static_cast<std::size_t>(iterations), cur, ops, {});
}

enum class PipelineKind { plain, pir, sir, rir, vfb, vfd, even, expl, physbefore, physafter };

inline const std::vector<std::pair<PipelineKind, std::string>>& pipeline_names() {
  static const std::vector<std::pair<PipelineKind, std::string>> names{
      {PipelineKind::plain, "plain"}, {PipelineKind::pir, "pir"},   {PipelineKind::sir, "sir"},
      {PipelineKind::rir, "rir"},     {PipelineKind::vfb, "vfb"},   {PipelineKind::vfd, "vfd"},
      {PipelineKind::even, "even"},   {PipelineKind::expl, "expl"}, {PipelineKind::physbefore, "physbefore"},
      {PipelineKind::physafter, "physafter"}};
  return names;
}

inline std::string to_string(PipelineKind k) {
  for (const auto& [kind, name] : pipeline_names())
    if (kind == k) return name;
  return "?";
}

inline PipelineKind pipeline_from_string(const std::string& s) {
  for (const auto& [kind, name] : pipeline_names())
    if (name == s) return kind;
  throw std::invalid_argument("unknown pipeline '" + s + "'");
}

inline bool is_scene_pipeline(PipelineKind k) { return k == PipelineKind::vfb || k == PipelineKind::vfd; }

/// Runs a single-object strategy. Single-hypothesis strategies start from the best-scoring
/// pool member.
inline RefinementOutcome run_single(PipelineKind kind, std::span<const Pose> pool, int iterations, const ObjectOps& ops,
                                    const BanditConfig& bandit_cfg) {
  if (pool.empty()) throw std::invalid_argument("run_single: empty pool");
  auto best_initial = [&] {
    if (pool.size() == 1) return pool[0];
    std::size_t top = 0;
    double top_score = ops.score(pool[0]);
    for (std::size_t j = 1; j < pool.size(); ++j)
      if (double s = ops.score(pool[j]); s > top_score) top = j, top_score = s;
    return pool[top];
  };
  switch (kind) {
    case PipelineKind::plain: return plain(best_initial(), iterations, ops);
    case PipelineKind::pir: return pir(best_initial(), iterations, ops);
    case PipelineKind::sir: return sir(Hypothesis{0, best_initial()}, iterations, ops);
    case PipelineKind::rir:
    case PipelineKind::vfb:
    case PipelineKind::vfd: return rir(pool, iterations, ops, BanditConfig{bandit_cfg.exploration, 1.0});
    case PipelineKind::even: return even(pool, iterations, ops);
    case PipelineKind::expl: return expl(pool, iterations, ops);
    case PipelineKind::physbefore: return phys_before(best_initial(), iterations, ops);
    case PipelineKind::physafter: return phys_after(best_initial(), iterations, ops);
  }
  throw std::invalid_argument("run_single: unknown pipeline");
}

// ---- Dependency lists -------------------------------------------------------------------------

struct DependencyOptions {
  double cluster_distance = 0.02;     // min point-pair distance joining two objects
  double min_horizontal_overlap = 0.1;
  double vertical_adjacency = 0.02;   // supported object's lowest point vs base's highest point
  std::size_t max_points_per_object = 600;
};

/// Base object first, then supported objects by increasing height.
struct SupportList {
  std::size_t cluster = 0;
  std::vector<std::size_t> objects;
};

struct DependencyOrder {
  std::vector<SupportList> lists;  // front-to-back; empty segments last

  std::vector<std::size_t> flattened() const {
    std::vector<std::size_t> out;
    for (const auto& l : lists) out.insert(out.end(), l.objects.begin(), l.objects.end());
    return out;
  }
};

/// Nodes of the search tree over N objects with n hypotheses each, root excluded.
inline std::size_t search_tree_nodes(std::size_t objects, std::size_t hypotheses) {
  if (hypotheses == 1) return objects;
  std::size_t power = 1;
  for (std::size_t i = 0; i < objects + 1; ++i) power *= hypotheses;
  return (power - 1) / (hypotheses - 1) - 1;
}

namespace detail {
struct SegmentStats {
  bool empty = true;
  double min_h = 0, max_h = 0, centroid_h = 0, depth = 0;
  Eigen::Vector2d lo = Eigen::Vector2d::Zero(), hi = Eigen::Vector2d::Zero();
  std::vector<Vec3> sample;
};

inline double overlap_ratio(const SegmentStats& a, const SegmentStats& b) {
  const Eigen::Vector2d lo = a.lo.cwiseMax(b.lo), hi = a.hi.cwiseMin(b.hi);
  if ((hi.array() <= lo.array()).any()) return 0.0;
  const double inter = (hi - lo).prod();
  const double area = std::min((a.hi - a.lo).prod(), (b.hi - b.lo).prod());
  return area > 0.0 ? inter / area : 0.0;
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
  std::size_t find(std::size_t i) { return parent[i] == i ? i : parent[i] = find(parent[i]); }
  void unite(std::size_t a, std::size_t b) {
    a = find(a), b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};
}  // namespace detail

/// Clusters objects by proximity of their segmented clouds and decomposes each cluster into
/// support lists. Lists are ordered front-to-back by the camera depth of their base object.
inline DependencyOrder build_dependency_lists(std::span<const PointCloud> segments, const Plane& support,
                                              const DependencyOptions& opts = {}) {
  const std::size_t n = segments.size();
  const Vec3 up = support.normal;
  const Vec3 e1 = up.unitOrthogonal(), e2 = up.cross(e1);
  std::vector<detail::SegmentStats> st(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pts = segments[i].points;
    if (pts.empty()) continue;
    auto& s = st[i];
    s.empty = false;
    s.min_h = std::numeric_limits<double>::infinity();
    s.max_h = -s.min_h;
    s.lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
    s.hi = -s.lo;
    Vec3 c = Vec3::Zero();
    for (const auto& p : pts) {
      const double h = support.signed_distance(p);
      s.min_h = std::min(s.min_h, h);
      s.max_h = std::max(s.max_h, h);
      const Eigen::Vector2d q(e1.dot(p), e2.dot(p));
      s.lo = s.lo.cwiseMin(q);
      s.hi = s.hi.cwiseMax(q);
      c += p;
    }
    c /= static_cast<double>(pts.size());
    s.centroid_h = support.signed_distance(c);
    s.depth = c.z();
    const std::size_t m = std::min(pts.size(), opts.max_points_per_object);
    for (std::size_t k = 0; k < m; ++k) s.sample.push_back(pts[k * pts.size() / m]);
  }

  detail::UnionFind uf(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (st[i].empty) continue;
    const KdTree3 tree(st[i].sample);
    for (std::size_t j = i + 1; j < n; ++j) {
      if (st[j].empty) continue;
      bool near = false;
      for (const auto& p : st[j].sample)
        if (tree.nearest(p).squared_distance < opts.cluster_distance * opts.cluster_distance) {
          near = true;
          break;
        }
      if (near) uf.unite(i, j);
    }
  }

  auto supports = [&](std::size_t base, std::size_t top) {
    const auto &a = st[base], &b = st[top];
    return uf.find(base) == uf.find(top) && b.centroid_h > a.max_h - 0.25 * (a.max_h - a.min_h) &&
           b.centroid_h > a.centroid_h && b.min_h <= a.max_h + opts.vertical_adjacency &&
           detail::overlap_ratio(a, b) > opts.min_horizontal_overlap;
  };

  // Every supported object hangs off its lowest supporter; the chain ends at a base.
  std::vector<std::size_t> base_of(n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return st[a].centroid_h < st[b].centroid_h;
  });
  for (std::size_t i : order) {
    base_of[i] = i;
    if (st[i].empty) continue;
    std::optional<std::size_t> lowest;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && !st[j].empty && supports(j, i) && (!lowest || st[j].centroid_h < st[*lowest].centroid_h)) lowest = j;
    if (lowest) base_of[i] = base_of[*lowest];
  }

  DependencyOrder dep;
  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < n; ++i)
    if (!st[i].empty && base_of[i] == i) roots.push_back(i);
  std::stable_sort(roots.begin(), roots.end(), [&](std::size_t a, std::size_t b) { return st[a].depth < st[b].depth; });
  std::vector<std::size_t> cluster_ids;
  for (std::size_t r : roots) {
    SupportList list;
    const std::size_t root_cluster = uf.find(r);
    auto it = std::find(cluster_ids.begin(), cluster_ids.end(), root_cluster);
    list.cluster = static_cast<std::size_t>(it - cluster_ids.begin());
    if (it == cluster_ids.end()) cluster_ids.push_back(root_cluster);
    for (std::size_t i : order)
      if (!st[i].empty && base_of[i] == r) list.objects.push_back(i);
    std::stable_partition(list.objects.begin(), list.objects.end(), [r](std::size_t i) { return i == r; });
    dep.lists.push_back(std::move(list));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!st[i].empty) continue;
    dep.lists.push_back(SupportList{cluster_ids.size(), {i}});
    cluster_ids.push_back(n + i);
  }
  return dep;
}

// ---- Scene-level refinement -------------------------------------------------------------------

struct SceneHypotheses {
  std::vector<std::vector<Pose>> pools;                         // per object
  std::vector<std::shared_ptr<const CollisionShape>> shapes;    // per object, for the environment
  std::vector<bool> usable;                                     // false for empty segments
  DependencyOrder order;
  SimEnv environment;                                           // support plane only

  std::size_t object_count() const { return pools.size(); }
  std::size_t node_count() const {
    std::size_t n = 0;
    for (const auto& p : pools) n += p.size();
    return n;
  }
};

/// Binds object `i` to an environment.
using OpsFactory = std::function<ObjectOps(std::size_t object, const SimEnv& env)>;
/// Scores a complete scene; objects with `present[i] == false` are left out of the render.
using SceneScorer = std::function<double(const std::vector<Pose>& poses, const std::vector<bool>& present)>;

struct SceneObjectResult {
  std::size_t object = 0;
  Pose pose;
  double score = 0.0;
  bool placed = false;
  std::vector<double> score_trace;
  std::vector<std::size_t> pulls;
};

struct SceneOutcome {
  std::vector<SceneObjectResult> objects;  // indexed by object
  std::vector<double> scene_trace;         // complete-scene score per iteration (vf_depth)
  double scene_score = 0.0;
  std::size_t refiner_calls = 0;
};

/// Per-object RIR to completion in dependency order; each winner joins the environment as a
/// fixed body before the next object is refined.
inline SceneOutcome vf_breadth(const SceneHypotheses& scene, int iterations, const OpsFactory& factory,
                               const BanditConfig& bandit_cfg) {
  SceneOutcome out;
  out.objects.resize(scene.object_count());
  SimEnv env = scene.environment;
  for (std::size_t i : scene.order.flattened()) {
    auto& res = out.objects[i];
    res.object = i;
    if (scene.pools[i].empty()) continue;
    res.pose = scene.pools[i].front();
    if (!scene.usable.empty() && !scene.usable[i]) continue;
    const auto o = rir(scene.pools[i], iterations, factory(i, env), BanditConfig{bandit_cfg.exploration, 1.0});
    res.pose = o.pose;
    res.score = o.score;
    res.placed = true;
    res.score_trace = o.score_trace;
    res.pulls = o.pulls;
    out.refiner_calls += o.refiner_calls;
    if (i < scene.shapes.size() && scene.shapes[i]) env.fixed_bodies.push_back({scene.shapes[i], o.pose});
  }
  return out;
}

/// One D-UCB pull per object per scene iteration, in dependency order. The complete scene of
/// the selected hypotheses' current estimates is scored and that score rewards every selected
/// arm; all bandits are then discounted. Returns the best complete scene evaluated.
inline SceneOutcome vf_depth(const SceneHypotheses& scene, int iterations, const OpsFactory& factory,
                             const SceneScorer& scene_score, const BanditConfig& bandit_cfg) {
  const std::size_t n = scene.object_count();
  SceneOutcome out;
  out.objects.resize(n);
  const auto order = scene.order.flattened();
  std::vector<std::vector<SirArm>> arms(n);
  std::vector<BanditState> bandits(n);
  std::vector<bool> present(n, false);
  std::vector<Pose> shown(n);
  std::vector<ObjectOps> scoring(n);
  std::vector<std::size_t> calls(n, 0);

  for (std::size_t i = 0; i < n; ++i) {
    out.objects[i].object = i;
    if (scene.pools[i].empty()) continue;
    shown[i] = scene.pools[i].front();
    if (!scene.usable.empty() && !scene.usable[i]) continue;
    present[i] = true;
    scoring[i] = factory(i, scene.environment);
    bandits[i] = BanditState(scene.pools[i].size(), bandit_cfg);
    out.objects[i].pulls.assign(scene.pools[i].size(), 0);
    std::size_t top = 0;
    for (std::size_t j = 0; j < scene.pools[i].size(); ++j) {
      const double s = scoring[i].score(scene.pools[i][j]);
      arms[i].emplace_back(scene.pools[i][j], s);
      bandits[i].update(j, s);
      if (s > arms[i][top].current().score) top = j;
    }
    shown[i] = arms[i][top].current().pose;
    out.objects[i].placed = true;
  }

  std::vector<Pose> best_scene = shown;
  double best_score = scene_score(shown, present);
  out.scene_trace.push_back(best_score);

  std::vector<std::size_t> selected(n, 0);
  for (int it = 0; it < iterations; ++it) {
    SimEnv env = scene.environment;
    for (std::size_t i : order) {
      if (!present[i]) continue;
      const ObjectOps ops = detail::counting(factory(i, env), calls[i]);
      const std::size_t j = bandits[i].select();
      selected[i] = j;
      arms[i][j].step(ops);
      shown[i] = arms[i][j].current().pose;
      ++out.objects[i].pulls[j];
      if (i < scene.shapes.size() && scene.shapes[i]) env.fixed_bodies.push_back({scene.shapes[i], shown[i]});
    }
    const double s = scene_score(shown, present);
    out.scene_trace.push_back(s);
    for (std::size_t i = 0; i < n; ++i) {
      if (!present[i]) continue;
      bandits[i].update(selected[i], s);
      out.objects[i].score_trace.push_back(s);
    }
    for (std::size_t i = 0; i < n; ++i)
      if (present[i]) bandits[i].discount();
    if (s > best_score) {
      best_score = s;
      best_scene = shown;
    }
  }

  out.scene_score = best_score;
  for (std::size_t i = 0; i < n; ++i) {
    out.objects[i].pose = best_scene[i];
    if (present[i]) out.objects[i].score = scoring[i].score(best_scene[i]);
    out.refiner_calls += calls[i];
  }
  return out;
}

/// Independent per-object RIR with a plane-only environment (the scene-unaware baseline).
inline SceneOutcome rir_per_object(const SceneHypotheses& scene, int iterations, const OpsFactory& factory,
                                   const BanditConfig& bandit_cfg) {
  SceneOutcome out;
  out.objects.resize(scene.object_count());
  for (std::size_t i = 0; i < scene.object_count(); ++i) {
    auto& res = out.objects[i];
    res.object = i;
    if (scene.pools[i].empty()) continue;
    res.pose = scene.pools[i].front();
    if (!scene.usable.empty() && !scene.usable[i]) continue;
    const auto o = rir(scene.pools[i], iterations, factory(i, scene.environment), BanditConfig{bandit_cfg.exploration, 1.0});
    res.pose = o.pose;
    res.score = o.score;
    res.placed = true;
    res.score_trace = o.score_trace;
    res.pulls = o.pulls;
    out.refiner_calls += o.refiner_calls;
  }
  return out;
}

// ---- Binding to observations ------------------------------------------------------------------

/// One object of a real (or synthetic) scene as seen by the refinement loops.
struct SceneObject {
  std::shared_ptr<const TriangleMesh> mesh;
  std::shared_ptr<const CollisionShape> shape;
  std::shared_ptr<const ModelPoints> model;
  PointCloud segment;  // observed points inside the object's mask
};

/// Observation, objects and settings needed to bind ObjectOps for real scoring, simulation
/// and ICP.
struct SceneProblem {
  const Observation* observation = nullptr;
  std::vector<SceneObject> objects;
  ScoreParams score_params;
  RefinerConfig refiner;

  ObjectOps ops(std::size_t i, const SimEnv& env) const {
    const SceneObject& obj = objects.at(i);
    ObjectOps ops;
    ops.simulate = [env, shape = obj.shape](const Pose& p) -> std::optional<Pose> {
      const auto r = settle(env, *shape, p);
      if (r.diverged) return std::nullopt;
      return r.pose;
    };
    ops.refine = [this, i](const Pose& p) {
      return refine_step(objects[i].segment, *objects[i].model, p, refiner);
    };
    ops.score = [this, i](const Pose& p) {
      const RenderBuffer r = render(*objects[i].mesh, p, observation->intrinsics, static_cast<int>(i));
      return fit_score(*observation, r, observation->masks.at(i), score_params);
    };
    return ops;
  }

  OpsFactory factory() const {
    return [this](std::size_t i, const SimEnv& env) { return ops(i, env); };
  }

  double scene_score(const std::vector<Pose>& poses, const std::vector<bool>& present) const {
    std::vector<RenderInstance> inst;
    for (std::size_t i = 0; i < objects.size(); ++i)
      if (present.at(i)) inst.push_back({objects[i].mesh.get(), poses.at(i), static_cast<int>(i)});
    return scene_fit_score(*observation, render(inst, observation->intrinsics), score_params);
  }

  SceneScorer scorer() const {
    return [this](const std::vector<Pose>& poses, const std::vector<bool>& present) {
      return scene_score(poses, present);
    };
  }
};

}  // namespace verefine
