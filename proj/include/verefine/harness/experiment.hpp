#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "verefine/bandit.hpp"
#include "verefine/harness/metrics.hpp"
#include "verefine/harness/scene.hpp"
#include "verefine/physics.hpp"
#include "verefine/pipeline.hpp"
#include "verefine/refinement.hpp"
#include "verefine/verification.hpp"

namespace verefine {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Simulation settings used with the ICP refiner: a short settle of 3 steps.
inline SimParams icp_physics() {
  SimParams p;
  p.settle_steps = 3;
  return p;
}

/// Everything a single run needs besides the scene.
struct RunSettings {
  Budget budget = Budget::from_split(5, 10);
  ScoreParams score;
  BanditConfig bandit;
  RefinerConfig refiner;
  SimParams physics = icp_physics();
  double vsd_tolerance = kVsdTolerance;

  void validate() const {
    if (!budget.is_consistent()) throw ConfigError("budget: total must equal pir_iterations * inner_steps");
    score.validate();
    bandit.validate();
    refiner.validate();
    physics.validate();
  }
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::vector<PipelineKind> pipelines{PipelineKind::rir};
  int scenes = 10;
  std::uint64_t seed = 1;
  int threads = 1;  // 0 uses every hardware thread
  std::string layout = "isolated";
  std::vector<std::string> kinds{"box", "cylinder", "wedge", "l_shape"};
  std::vector<std::string> base_kinds{"box"};
  std::vector<CorruptionSpec> levels{CorruptionSpec{}};
  RunSettings settings;
  std::vector<double> add_thresholds_mm{5.0, 10.0, 20.0};
  std::string results_path = "results.jsonl";
  std::string aggregate_path = "aggregate.csv";

  LayoutSpec layout_spec() const {
    LayoutSpec s = LayoutSpec::parse(layout);
    s.kinds = kinds;
    s.base_kinds = base_kinds;
    return s;
  }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }
}

inline std::vector<double> parse_doubles(const std::string& key, const std::string& s) {
  std::vector<double> v;
  for (const auto& item : split_list(s)) v.push_back(parse_double(key, item));
  if (v.empty()) throw ConfigError(key + ": empty list");
  return v;
}

class Reader {
 public:
  explicit Reader(const boost::property_tree::ptree& tree) : tree_(tree) {}

  std::optional<std::string> raw(const std::string& key) const {
    if (auto v = tree_.get_optional<std::string>(boost::property_tree::ptree::path_type(key, '.'))) return *v;
    return std::nullopt;
  }
  std::string text(const std::string& key, const std::string& def) const { return raw(key).value_or(def); }
  double number(const std::string& key, double def) const {
    const auto r = raw(key);
    return r ? parse_double(key, *r) : def;
  }
  int integer(const std::string& key, int def) const {
    const double v = number(key, def);
    if (v != std::floor(v)) throw ConfigError(key + ": expected an integer");
    return static_cast<int>(v);
  }

 private:
  const boost::property_tree::ptree& tree_;
};

template <typename T>
std::vector<T> broadcast(const std::string& key, const std::vector<T>& v, std::size_t n) {
  if (v.size() == n) return v;
  if (v.size() == 1) return std::vector<T>(n, v[0]);
  throw ConfigError(key + ": list length " + std::to_string(v.size()) + " does not match grid length " +
                    std::to_string(n));
}

}  // namespace detail

/// Parses an INI experiment description. Unknown keys are rejected so typos surface.
inline ExperimentConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  static const std::map<std::string, std::vector<std::string>> known{
      {"experiment", {"name", "pipelines", "scenes", "seed", "threads", "layout", "kinds", "base_kinds", "results", "aggregate"}},
      {"corruption", {"rotation_deg", "translation_mm", "occlusion", "dropout_height_mm", "pool_size"}},
      {"budget", {"pir_iterations", "inner_steps"}},
      {"score", {"tau_mm", "alpha_deg"}},
      {"bandit", {"exploration", "discount"}},
      {"refiner", {"kind", "trim_fraction", "max_correspondence_mm", "model_samples", "max_observed_points",
                   "sampling_seed"}},
      {"physics", {"timestep", "solver_iterations", "substeps", "mass", "settle_steps", "friction", "baumgarte",
                   "penetration_slop_mm", "contact_margin_mm", "divergence_speed"}},
      {"metrics", {"add_thresholds_mm", "vsd_tolerance_mm"}}};
  for (const auto& [section, body] : tree) {
    auto it = known.find(section);
    if (it == known.end()) throw ConfigError("config: unknown section [" + section + "]");
    for (const auto& [key, value] : body)
      if (std::find(it->second.begin(), it->second.end(), key) == it->second.end())
        throw ConfigError("config: unknown key " + section + "." + key);
  }

  const detail::Reader r(tree);
  ExperimentConfig c;
  c.name = r.text("experiment.name", c.name);
  if (auto p = r.raw("experiment.pipelines")) {
    c.pipelines.clear();
    for (const auto& name : detail::split_list(*p)) {
      try {
        c.pipelines.push_back(pipeline_from_string(name));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    }
    if (c.pipelines.empty()) throw ConfigError("experiment.pipelines: empty list");
  }
  c.scenes = r.integer("experiment.scenes", c.scenes);
  if (c.scenes < 0) throw ConfigError("experiment.scenes must be >= 0");
  c.seed = static_cast<std::uint64_t>(r.number("experiment.seed", static_cast<double>(c.seed)));
  c.threads = r.integer("experiment.threads", c.threads);
  if (c.threads < 0) throw ConfigError("experiment.threads must be >= 0");
  c.layout = r.text("experiment.layout", c.layout);
  if (auto k = r.raw("experiment.kinds")) c.kinds = detail::split_list(*k);
  if (auto k = r.raw("experiment.base_kinds")) c.base_kinds = detail::split_list(*k);
  c.results_path = r.text("experiment.results", c.results_path);
  c.aggregate_path = r.text("experiment.aggregate", c.aggregate_path);
  try {
    (void)c.layout_spec();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  const auto rot = detail::parse_doubles("corruption.rotation_deg", r.text("corruption.rotation_deg", "0"));
  const auto trans = detail::parse_doubles("corruption.translation_mm", r.text("corruption.translation_mm", "0"));
  const auto occ = detail::parse_doubles("corruption.occlusion", r.text("corruption.occlusion", "0"));
  const std::string drop_text = r.text("corruption.dropout_height_mm", "none");
  std::vector<std::optional<double>> drop;
  for (const auto& item : detail::split_list(drop_text))
    drop.push_back(item == "none" ? std::nullopt : std::optional<double>(detail::parse_double("corruption.dropout_height_mm", item) / 1000.0));
  if (drop.empty()) drop.push_back(std::nullopt);
  const std::size_t n = std::max({rot.size(), trans.size(), occ.size(), drop.size()});
  const auto rot_b = detail::broadcast("corruption.rotation_deg", rot, n);
  const auto trans_b = detail::broadcast("corruption.translation_mm", trans, n);
  const auto occ_b = detail::broadcast("corruption.occlusion", occ, n);
  const auto drop_b = detail::broadcast("corruption.dropout_height_mm", drop, n);
  const int pool = r.integer("corruption.pool_size", 5);
  c.levels.clear();
  for (std::size_t i = 0; i < n; ++i) {
    CorruptionSpec s{rot_b[i], trans_b[i] / 1000.0, occ_b[i], drop_b[i], pool};
    try {
      s.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    c.levels.push_back(s);
  }

  auto& st = c.settings;
  const int pir = r.integer("budget.pir_iterations", st.budget.pir_iterations);
  const int inner = r.integer("budget.inner_steps", st.budget.inner_steps);
  if (pir < 1 || inner < 1) throw ConfigError("budget: pir_iterations and inner_steps must be >= 1");
  st.budget = Budget::from_split(pir, inner);
  st.score.tau = r.number("score.tau_mm", st.score.tau * 1000.0) / 1000.0;
  if (auto a = r.raw("score.alpha_deg")) st.score.alpha = ScoreParams::alpha_from_degrees(detail::parse_double("score.alpha_deg", *a));
  st.bandit.exploration = r.number("bandit.exploration", st.bandit.exploration);
  st.bandit.discount = r.number("bandit.discount", st.bandit.discount);
  try {
    st.refiner.kind = refiner_kind_from_string(r.text("refiner.kind", to_string(st.refiner.kind)));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  st.refiner.inner_steps_per_call = inner;
  st.refiner.trim_fraction = r.number("refiner.trim_fraction", st.refiner.trim_fraction);
  st.refiner.max_correspondence_distance =
      r.number("refiner.max_correspondence_mm", st.refiner.max_correspondence_distance * 1000.0) / 1000.0;
  st.refiner.model_samples = static_cast<std::size_t>(r.integer("refiner.model_samples", static_cast<int>(st.refiner.model_samples)));
  st.refiner.max_observed_points =
      static_cast<std::size_t>(r.integer("refiner.max_observed_points", static_cast<int>(st.refiner.max_observed_points)));
  st.refiner.sampling_seed = static_cast<std::uint64_t>(r.integer("refiner.sampling_seed", static_cast<int>(st.refiner.sampling_seed)));
  auto& ph = st.physics;
  ph.timestep = r.number("physics.timestep", ph.timestep);
  ph.solver_iterations = r.integer("physics.solver_iterations", ph.solver_iterations);
  ph.substeps = r.integer("physics.substeps", ph.substeps);
  ph.mass = r.number("physics.mass", ph.mass);
  ph.settle_steps = r.integer("physics.settle_steps", ph.settle_steps);
  ph.friction = r.number("physics.friction", ph.friction);
  ph.baumgarte = r.number("physics.baumgarte", ph.baumgarte);
  ph.penetration_slop = r.number("physics.penetration_slop_mm", ph.penetration_slop * 1000.0) / 1000.0;
  ph.contact_margin = r.number("physics.contact_margin_mm", ph.contact_margin * 1000.0) / 1000.0;
  ph.divergence_speed = r.number("physics.divergence_speed", ph.divergence_speed);
  if (auto t = r.raw("metrics.add_thresholds_mm")) c.add_thresholds_mm = detail::parse_doubles("metrics.add_thresholds_mm", *t);
  st.vsd_tolerance = r.number("metrics.vsd_tolerance_mm", st.vsd_tolerance * 1000.0) / 1000.0;
  try {
    st.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  return parse_config(in);
}

// ---- Runs ---------------------------------------------------------------------------------------

struct ObjectRecord {
  std::size_t id = 0;
  std::string mesh;
  Pose initial_pose;  // best-scoring pool member
  Pose final_pose;
  PoseError initial_error;
  PoseError final_error;
  double initial_score = 0.0;
  double final_score = 0.0;
  std::vector<double> f_trace;
  std::vector<std::size_t> pulls;
};

struct RunRecord {
  std::size_t scene_id = 0;
  std::uint64_t seed = 0;
  std::size_t level = 0;
  PipelineKind pipeline = PipelineKind::rir;
  CorruptionSpec corruption;
  double measured_occlusion = 0.0;
  double measured_rotation_deg = 0.0;
  double measured_translation_m = 0.0;
  std::vector<ObjectRecord> objects;
  std::vector<double> scene_trace;
  std::size_t refiner_calls = 0;
  double wall_ms = 0.0;
};

/// Model point sets shared across runs, keyed by model name.
class ModelPointCache {
 public:
  explicit ModelPointCache(RefinerConfig cfg) : cfg_(cfg) {}
  std::shared_ptr<const ModelPoints> get(const ObjectModel& m) {
    auto it = cache_.find(m.name);
    if (it == cache_.end()) it = cache_.emplace(m.name, std::make_shared<const ModelPoints>(*m.mesh, cfg_)).first;
    return it->second;
  }

 private:
  RefinerConfig cfg_;
  std::map<std::string, std::shared_ptr<const ModelPoints>> cache_;
};

/// Binds a corrupted scene to the real scoring, simulation and refinement primitives.
inline SceneProblem make_problem(const SyntheticScene& scene, const CorruptedScene& data, const RunSettings& st,
                                 ModelPointCache& points) {
  SceneProblem p;
  p.observation = &data.observation;
  p.score_params = st.score;
  p.refiner = st.refiner;
  p.refiner.inner_steps_per_call = st.budget.inner_steps;
  for (std::size_t i = 0; i < scene.size(); ++i)
    p.objects.push_back(SceneObject{scene.models[i].mesh, scene.models[i].shape, points.get(scene.models[i]),
                                    data.observation.segment_cloud(i)});
  return p;
}

inline SceneHypotheses make_hypotheses(const SyntheticScene& scene, const CorruptedScene& data,
                                       const SceneProblem& problem, const RunSettings& st) {
  SceneHypotheses h;
  h.pools = data.pools;
  std::vector<PointCloud> segments;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    h.shapes.push_back(scene.models[i].shape);
    h.usable.push_back(!problem.objects[i].segment.points.empty());
    segments.push_back(problem.objects[i].segment);
  }
  h.order = build_dependency_lists(segments, scene.support);
  h.environment.support = scene.support;
  h.environment.params = st.physics;
  return h;
}

/// Runs one pipeline on one corrupted scene and measures errors against the truth.
inline RunRecord run_scene(PipelineKind kind, const SyntheticScene& scene, const CorruptedScene& data,
                           const RunSettings& st, ModelPointCache& points) {
  const auto t0 = std::chrono::steady_clock::now();
  const SceneProblem problem = make_problem(scene, data, st, points);
  const SceneHypotheses hyp = make_hypotheses(scene, data, problem, st);
  const int iterations = st.budget.pir_iterations;

  SceneOutcome outcome;
  if (kind == PipelineKind::vfb) {
    outcome = vf_breadth(hyp, iterations, problem.factory(), st.bandit);
  } else if (kind == PipelineKind::vfd) {
    outcome = vf_depth(hyp, iterations, problem.factory(), problem.scorer(), st.bandit);
  } else {
    outcome.objects.resize(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
      auto& res = outcome.objects[i];
      res.object = i;
      res.pose = hyp.pools[i].front();
      if (!hyp.usable[i]) continue;
      const auto o = run_single(kind, hyp.pools[i], iterations, problem.ops(i, hyp.environment), st.bandit);
      res.pose = o.pose;
      res.score = o.score;
      res.placed = true;
      res.score_trace = o.score_trace;
      res.pulls = o.pulls;
      outcome.refiner_calls += o.refiner_calls;
    }
  }
  const auto t1 = std::chrono::steady_clock::now();

  RunRecord rec;
  rec.pipeline = kind;
  rec.scene_trace = outcome.scene_trace;
  rec.refiner_calls = outcome.refiner_calls;
  rec.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  double rot_sum = 0.0, trans_sum = 0.0, occ_sum = 0.0;
  std::size_t pose_count = 0;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    ObjectRecord o;
    o.id = i;
    o.mesh = scene.models[i].name;
    const auto& model = scene.models[i];
    const ObjectOps ops = problem.ops(i, hyp.environment);
    std::size_t top = 0;
    double top_score = -1.0;
    for (std::size_t j = 0; j < hyp.pools[i].size(); ++j) {
      const Pose& p = hyp.pools[i][j];
      rot_sum += geodesic_angle_deg(p.rotation, scene.truth[i].rotation);
      trans_sum += translation_distance(p, scene.truth[i]);
      ++pose_count;
      const double s = hyp.usable[i] ? ops.score(p) : 0.0;
      if (s > top_score) top = j, top_score = s;
    }
    o.initial_score = top_score;
    o.initial_pose = hyp.pools[i][top];
    o.final_pose = outcome.objects[i].pose;
    o.initial_error = pose_error(hyp.pools[i][top], scene.truth[i], *model.mesh, model.symmetry, scene.intrinsics,
                                 st.vsd_tolerance);
    const auto& res = outcome.objects[i];
    o.final_error = pose_error(res.pose, scene.truth[i], *model.mesh, model.symmetry, scene.intrinsics, st.vsd_tolerance);
    o.final_score = hyp.usable[i] ? ops.score(res.pose) : 0.0;
    o.f_trace = res.score_trace;
    o.pulls = res.pulls;
    occ_sum += data.occluded_fraction.at(i);
    rec.objects.push_back(std::move(o));
  }
  if (pose_count > 0) {
    rec.measured_rotation_deg = rot_sum / static_cast<double>(pose_count);
    rec.measured_translation_m = trans_sum / static_cast<double>(pose_count);
  }
  if (scene.size() > 0) rec.measured_occlusion = occ_sum / static_cast<double>(scene.size());
  return rec;
}

/// Deterministic per-job seed.
inline std::uint64_t job_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), 0x9e3779b9u};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline nlohmann::json error_to_json(const PoseError& e) {
  return {{"rotation_deg", e.rotation_deg}, {"translation_m", e.translation_m}, {"add_m", e.add}, {"vsd_recall", e.vsd_recall}};
}

inline nlohmann::json record_to_json(const RunRecord& r) {
  nlohmann::json j;
  j["scene_id"] = r.scene_id;
  j["seed"] = r.seed;
  j["pipeline"] = to_string(r.pipeline);
  j["level"] = r.level;
  j["corruption"] = {{"rotation_deg", r.corruption.rotation_deg},
                     {"translation_m", r.corruption.translation_m},
                     {"occlusion", r.corruption.occlusion},
                     {"dropout_height_m", r.corruption.dropout_height ? nlohmann::json(*r.corruption.dropout_height) : nlohmann::json()},
                     {"pool_size", r.corruption.pool_size},
                     {"measured_occlusion", r.measured_occlusion},
                     {"measured_rotation_deg", r.measured_rotation_deg},
                     {"measured_translation_m", r.measured_translation_m}};
  j["per_object"] = nlohmann::json::array();
  for (const auto& o : r.objects)
    j["per_object"].push_back({{"id", o.id},
                               {"mesh", o.mesh},
                               {"initial_pose", detail::pose_to_json(o.initial_pose)},
                               {"final_pose", detail::pose_to_json(o.final_pose)},
                               {"initial_error", error_to_json(o.initial_error)},
                               {"final_error", error_to_json(o.final_error)},
                               {"initial_score", o.initial_score},
                               {"final_score", o.final_score},
                               {"f_trace", o.f_trace},
                               {"pulls", o.pulls}});
  j["scene_trace"] = r.scene_trace;
  j["refiner_calls"] = r.refiner_calls;
  j["wall_ms"] = r.wall_ms;
  return j;
}

inline PoseError error_from_json(const nlohmann::json& j) {
  return {j.at("rotation_deg").get<double>(), j.at("translation_m").get<double>(), j.at("add_m").get<double>(),
          j.at("vsd_recall").get<double>()};
}

inline RunRecord record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.scene_id = j.at("scene_id").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  try {
    r.pipeline = pipeline_from_string(j.at("pipeline").get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  r.level = j.at("level").get<std::size_t>();
  const auto& c = j.at("corruption");
  r.corruption.rotation_deg = c.at("rotation_deg").get<double>();
  r.corruption.translation_m = c.at("translation_m").get<double>();
  r.corruption.occlusion = c.at("occlusion").get<double>();
  if (!c.at("dropout_height_m").is_null()) r.corruption.dropout_height = c["dropout_height_m"].get<double>();
  r.corruption.pool_size = c.at("pool_size").get<int>();
  r.measured_occlusion = c.at("measured_occlusion").get<double>();
  r.measured_rotation_deg = c.at("measured_rotation_deg").get<double>();
  r.measured_translation_m = c.at("measured_translation_m").get<double>();
  for (const auto& o : j.at("per_object")) {
    ObjectRecord rec;
    rec.id = o.at("id").get<std::size_t>();
    rec.mesh = o.at("mesh").get<std::string>();
    rec.initial_pose = detail::pose_from_json(o.at("initial_pose"));
    rec.final_pose = detail::pose_from_json(o.at("final_pose"));
    rec.initial_error = error_from_json(o.at("initial_error"));
    rec.final_error = error_from_json(o.at("final_error"));
    rec.initial_score = o.at("initial_score").get<double>();
    rec.final_score = o.at("final_score").get<double>();
    rec.f_trace = o.at("f_trace").get<std::vector<double>>();
    rec.pulls = o.at("pulls").get<std::vector<std::size_t>>();
    r.objects.push_back(std::move(rec));
  }
  r.scene_trace = j.at("scene_trace").get<std::vector<double>>();
  r.refiner_calls = j.at("refiner_calls").get<std::size_t>();
  r.wall_ms = j.at("wall_ms").get<double>();
  return r;
}

/// Reads a JSON Lines results file; blank lines are skipped.
inline std::vector<RunRecord> read_results(std::istream& in) {
  std::vector<RunRecord> runs;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      runs.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw io::IoError("results line " + std::to_string(n) + ": " + e.what());
    }
  }
  return runs;
}

struct AggregateRow {
  PipelineKind pipeline = PipelineKind::rir;
  std::size_t level = 0;
  CorruptionSpec corruption;
  std::size_t runs = 0;
  std::size_t objects = 0;
  double mean_rotation_deg = 0, mean_translation_mm = 0, mean_add_mm = 0, mean_initial_add_mm = 0;
  double mean_vsd_recall = 0, mean_final_score = 0, mean_wall_ms = 0, mean_occlusion = 0;
  std::vector<double> add_recall;  // per threshold
  std::vector<double> mean_f_trace;
};

inline std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& runs, const std::vector<double>& thresholds_mm) {
  std::vector<AggregateRow> rows;
  auto find_row = [&](const RunRecord& r) -> AggregateRow& {
    for (auto& row : rows)
      if (row.pipeline == r.pipeline && row.level == r.level) return row;
    AggregateRow row;
    row.pipeline = r.pipeline;
    row.level = r.level;
    row.corruption = r.corruption;
    row.add_recall.assign(thresholds_mm.size(), 0.0);
    rows.push_back(row);
    return rows.back();
  };
  std::vector<std::vector<std::size_t>> trace_counts;
  for (const auto& r : runs) {
    AggregateRow& row = find_row(r);
    ++row.runs;
    row.mean_wall_ms += r.wall_ms;
    row.mean_occlusion += r.measured_occlusion;
    for (const auto& o : r.objects) {
      ++row.objects;
      row.mean_rotation_deg += o.final_error.rotation_deg;
      row.mean_translation_mm += 1000.0 * o.final_error.translation_m;
      row.mean_add_mm += 1000.0 * o.final_error.add;
      row.mean_initial_add_mm += 1000.0 * o.initial_error.add;
      row.mean_vsd_recall += o.final_error.vsd_recall;
      row.mean_final_score += o.final_score;
      for (std::size_t t = 0; t < thresholds_mm.size(); ++t) row.add_recall[t] += 1000.0 * o.final_error.add < thresholds_mm[t];
      if (row.mean_f_trace.size() < o.f_trace.size()) row.mean_f_trace.resize(o.f_trace.size(), 0.0);
      for (std::size_t k = 0; k < o.f_trace.size(); ++k) row.mean_f_trace[k] += o.f_trace[k];
    }
  }
  for (auto& row : rows) {
    const double n = std::max<std::size_t>(row.objects, 1);
    row.mean_rotation_deg /= n;
    row.mean_translation_mm /= n;
    row.mean_add_mm /= n;
    row.mean_initial_add_mm /= n;
    row.mean_vsd_recall /= n;
    row.mean_final_score /= n;
    for (auto& a : row.add_recall) a /= n;
    for (auto& f : row.mean_f_trace) f /= n;
    row.mean_wall_ms /= std::max<std::size_t>(row.runs, 1);
    row.mean_occlusion /= std::max<std::size_t>(row.runs, 1);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const AggregateRow& a, const AggregateRow& b) {
    return a.level != b.level ? a.level < b.level : a.pipeline < b.pipeline;
  });
  return rows;
}

inline void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows,
                                const std::vector<double>& thresholds_mm) {
  out << "pipeline,level,rotation_deg,translation_mm,occlusion,dropout_height_mm,runs,objects,mean_rotation_deg,"
         "mean_translation_mm,mean_add_mm,mean_initial_add_mm,mean_vsd_recall,mean_final_score,mean_occlusion";
  for (double t : thresholds_mm) out << ",add_recall_" << t << "mm";
  out << ",mean_f_trace,mean_wall_ms\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << to_string(r.pipeline) << ',' << r.level << ',' << r.corruption.rotation_deg << ','
        << 1000.0 * r.corruption.translation_m << ',' << r.corruption.occlusion << ',';
    if (r.corruption.dropout_height) out << 1000.0 * *r.corruption.dropout_height;
    else out << "none";
    out << ',' << r.runs << ',' << r.objects << ',' << r.mean_rotation_deg << ',' << r.mean_translation_mm << ','
        << r.mean_add_mm << ',' << r.mean_initial_add_mm << ',' << r.mean_vsd_recall << ',' << r.mean_final_score << ','
        << r.mean_occlusion;
    for (double a : r.add_recall) out << ',' << a;
    out << ',';
    for (std::size_t k = 0; k < r.mean_f_trace.size(); ++k) out << (k ? ";" : "") << r.mean_f_trace[k];
    out << ',' << r.mean_wall_ms << '\n';
  }
}

inline std::vector<CorruptionSpec> error_sweep(double rot_step_deg, double trans_step_m, int levels, int pool,
                                               double occlusion = 0.0) {
  std::vector<CorruptionSpec> v;
  for (int i = 0; i < levels; ++i) v.push_back(CorruptionSpec{rot_step_deg * i, trans_step_m * i, occlusion, std::nullopt, pool});
  return v;
}

inline const std::vector<std::string>& builtin_ablations() {
  static const std::vector<std::string> names{"physics", "translation", "hypotheses", "occlusion", "scene"};
  return names;
}

/// Built-in sweeps: physics placement under rotation or translation error, hypothesis
/// allocation, occlusion robustness, and scene-level strategies on stacks.
inline ExperimentConfig builtin_ablation(const std::string& name, int scenes) {
  ExperimentConfig c;
  c.name = name;
  c.scenes = scenes;
  using P = PipelineKind;
  if (name == "physics" || name == "translation") {
    c.pipelines = {P::plain, P::pir, P::sir, P::physbefore, P::physafter};
    c.levels = name == "physics" ? error_sweep(5.0, 0.0, 10, 1) : error_sweep(0.0, 0.005, 10, 1);
  } else if (name == "hypotheses") {
    c.pipelines = {P::rir, P::even, P::expl, P::sir};
    c.levels = error_sweep(5.0, 0.005, 10, 5);
    c.settings.budget = Budget::from_split(25, 10);
  } else if (name == "occlusion") {
    c.pipelines = {P::sir, P::plain};
    c.levels.clear();
    for (int i = 0; i < 10; ++i) c.levels.push_back(CorruptionSpec{5.0, 0.005, 0.1 * i, std::nullopt, 1});
  } else if (name == "scene") {
    c.pipelines = {P::vfd, P::vfb, P::rir};
    c.layout = "triple-stack";
    c.levels = {CorruptionSpec{10.0, 0.01, 0.0, std::nullopt, 5}};
    c.settings.budget = Budget::from_split(25, 10);
  } else {
    throw ConfigError("unknown ablation '" + name + "'");
  }
  c.settings.refiner.inner_steps_per_call = c.settings.budget.inner_steps;
  c.results_path = name + ".jsonl";
  c.aggregate_path = name + ".csv";
  return c;
}

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;
using RunObserver = std::function<void(const SyntheticScene&, const CorruptedScene&, const RunRecord&)>;

/// Scenes x corruption levels x pipelines. Scenes and corruptions are shared across pipelines
/// so comparisons are paired. Scenes run as independent jobs on `cfg.threads` workers; records
/// come back (and go to `jsonl`) in scene, level, pipeline order regardless of scheduling.
inline std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg, std::ostream* jsonl = nullptr,
                                             const ProgressFn& progress = {}, const RunObserver& observe = {}) {
  cfg.settings.validate();
  const LayoutSpec layout = cfg.layout_spec();
  SimParams scene_physics = cfg.settings.physics;
  scene_physics.settle_steps = SimParams{}.settle_steps;
  const std::size_t scenes = static_cast<std::size_t>(std::max(cfg.scenes, 0));
  const std::size_t per_scene = cfg.levels.size() * cfg.pipelines.size();
  const std::size_t total = scenes * per_scene;
  std::vector<std::vector<RunRecord>> by_scene(scenes);
  std::vector<std::exception_ptr> errors(scenes);
  std::atomic<std::size_t> next{0}, done{0};
  std::mutex report;
  std::size_t flushed = 0;
  std::vector<bool> finished(scenes, false);

  auto flush_ready = [&] {
    while (flushed < scenes && finished[flushed]) {
      if (jsonl && !errors[flushed])
        for (const auto& rec : by_scene[flushed]) *jsonl << record_to_json(rec).dump() << '\n';
      ++flushed;
    }
  };

  auto worker = [&] {
    ModelLibrary library(cfg.settings.physics.mass);
    ModelPointCache points(cfg.settings.refiner);
    for (std::size_t s = next++; s < scenes; s = next++) {
      try {
        const std::uint64_t scene_seed = job_seed(cfg.seed, s);
        const SyntheticScene scene = generate_scene(layout, scene_seed, library, scene_physics);
        for (std::size_t l = 0; l < cfg.levels.size(); ++l) {
          Rng rng(job_seed(cfg.seed, s, l + 1));
          const CorruptedScene data = corrupt(scene, cfg.levels[l], rng);
          for (PipelineKind kind : cfg.pipelines) {
            RunRecord rec = run_scene(kind, scene, data, cfg.settings, points);
            rec.scene_id = s;
            rec.seed = scene_seed;
            rec.level = l;
            rec.corruption = cfg.levels[l];
            const std::size_t count = ++done;
            {
              std::lock_guard lock(report);
              if (observe) observe(scene, data, rec);
              if (progress) progress(count, total);
            }
            by_scene[s].push_back(std::move(rec));
          }
        }
      } catch (...) {
        errors[s] = std::current_exception();
      }
      std::lock_guard lock(report);
      finished[s] = true;
      flush_ready();
    }
  };

  std::size_t workers = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency())
                                         : static_cast<std::size_t>(cfg.threads);
  workers = std::min(workers, std::max<std::size_t>(scenes, 1));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<RunRecord> runs;
  runs.reserve(total);
  for (auto& v : by_scene)
    for (auto& rec : v) runs.push_back(std::move(rec));
  return runs;
}

}  // namespace verefine
