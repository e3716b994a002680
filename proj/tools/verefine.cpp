// Command-line front end: synth, run, ablate, report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "verefine/harness/experiment.hpp"
#include "verefine/io.hpp"

namespace fs = std::filesystem;
using namespace verefine;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

std::string numbered(const std::string& stem, std::size_t i, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%03zu", i);
  return stem + buf + ext;
}

void dump_observation(const fs::path& dir, const std::string& stem, const Observation& obs) {
  io::write_depth_pgm((dir / (stem + "_depth.pgm")).string(), obs.depth);
  io::write_ppm((dir / (stem + "_normals.ppm")).string(), io::normals_to_rgb(obs.normals));
  for (std::size_t i = 0; i < obs.masks.size(); ++i)
    io::write_mask_pgm((dir / numbered(stem + "_mask", i, ".pgm")).string(), obs.masks[i]);
}

/// Score heatmaps of each object's final estimate against the corrupted observation.
void dump_run(const fs::path& dir, const SyntheticScene& scene, const CorruptedScene& data, const RunRecord& rec,
              const ScoreParams& params) {
  const std::string stem = numbered("scene", rec.scene_id, "") + "_" + to_string(rec.pipeline) +
                           numbered("_level", rec.level, "");
  dump_observation(dir, stem, data.observation);
  for (std::size_t i = 0; i < rec.objects.size(); ++i) {
    const RenderBuffer r = render(*scene.models[i].mesh, rec.objects[i].final_pose, scene.intrinsics, static_cast<int>(i));
    const auto heat = score_map(data.observation, r, data.observation.masks[i], params);
    io::write_ppm((dir / numbered(stem + "_score", i, ".ppm")).string(), io::heatmap_to_rgb(heat));
    io::write_depth_pgm((dir / numbered(stem + "_render", i, ".pgm")).string(), r.depth);
  }
}

void write_outputs(const ExperimentConfig& cfg, const std::vector<RunRecord>& runs) {
  std::ofstream csv(cfg.aggregate_path);
  if (!csv) throw io::IoError("cannot write " + cfg.aggregate_path);
  write_aggregate_csv(csv, aggregate(runs, cfg.add_thresholds_mm), cfg.add_thresholds_mm);
}

/// Mean final ADD (mm) per corruption level, one polyline per pipeline.
Image<io::Rgb> plot_mean_add(const std::vector<AggregateRow>& rows) {
  constexpr int w = 640, h = 400, margin = 40;
  Image<io::Rgb> img(w, h, io::Rgb{255, 255, 255});
  std::size_t levels = 1;
  double top = 1e-9;
  std::map<PipelineKind, std::vector<std::pair<std::size_t, double>>> series;
  for (const auto& r : rows) {
    levels = std::max(levels, r.level + 1);
    top = std::max(top, r.mean_add_mm);
    series[r.pipeline].push_back({r.level, r.mean_add_mm});
  }
  auto px = [&](double level) { return margin + static_cast<int>(level * (w - 2 * margin) / std::max<std::size_t>(levels - 1, 1)); };
  auto py = [&](double v) { return h - margin - static_cast<int>(v / top * (h - 2 * margin)); };
  auto put = [&](int x, int y, io::Rgb c) {
    if (x >= 0 && y >= 0 && x < w && y < h) img(x, y) = c;
  };
  auto line = [&](int x0, int y0, int x1, int y1, io::Rgb c) {
    const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
    for (int i = 0; i <= steps; ++i) put(x0 + (x1 - x0) * i / steps, y0 + (y1 - y0) * i / steps, c);
  };
  line(margin, h - margin, w - margin, h - margin, {0, 0, 0});
  line(margin, margin, margin, h - margin, {0, 0, 0});
  static const io::Rgb palette[] = {{228, 26, 28}, {55, 126, 184}, {77, 175, 74}, {152, 78, 163}, {255, 127, 0},
                                    {166, 86, 40}, {247, 129, 191}, {153, 153, 153}, {0, 0, 0}, {255, 217, 47}};
  std::size_t k = 0;
  for (auto& [kind, pts] : series) {
    std::sort(pts.begin(), pts.end());
    const io::Rgb c = palette[k++ % std::size(palette)];
    for (std::size_t i = 0; i + 1 < pts.size(); ++i)
      for (int dy = -1; dy <= 1; ++dy)
        line(px(pts[i].first), py(pts[i].second) + dy, px(pts[i + 1].first), py(pts[i + 1].second) + dy, c);
    for (const auto& [l, v] : pts)
      for (int dx = -3; dx <= 3; ++dx)
        for (int dy = -3; dy <= 3; ++dy) put(px(l) + dx, py(v) + dy, c);
  }
  return img;
}

int execute(const ExperimentConfig& cfg, const std::string& dump_dir, bool quiet) {
  std::ofstream jsonl(cfg.results_path);
  if (!jsonl) throw io::IoError("cannot write " + cfg.results_path);
  RunObserver observe;
  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    observe = [&](const SyntheticScene& scene, const CorruptedScene& data, const RunRecord& rec) {
      dump_run(dump_dir, scene, data, rec, cfg.settings.score);
    };
  }
  const auto runs = run_experiment(
      cfg, &jsonl,
      [quiet](std::size_t done, std::size_t total) {
        if (!quiet) std::cerr << "\r" << done << "/" << total << std::flush;
      },
      observe);
  if (!quiet && !runs.empty()) std::cerr << "\n";
  write_outputs(cfg, runs);
  if (!quiet) std::cerr << runs.size() << " runs -> " << cfg.results_path << ", " << cfg.aggregate_path << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-guided, verification-supervised pose refinement on synthetic scenes"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  auto* synth = app.add_subcommand("synth", "Generate scenes and save them as JSON");
  std::string layout = "isolated", out_dir = "scenes", kinds;
  int count = 1;
  std::uint64_t seed = 1;
  bool dump = false;
  synth->add_option("--layout", layout, "isolated | pair-stack | triple-stack | clutter-<k>")->capture_default_str();
  synth->add_option("-n,--count", count, "Number of scenes")->capture_default_str()->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", seed, "Base seed")->capture_default_str();
  synth->add_option("--kinds", kinds, "Comma-separated mesh kinds (zoo names or obj:<path>)");
  synth->add_option("-o,--out", out_dir, "Output directory")->capture_default_str();
  synth->add_flag("--dump", dump, "Also write depth/mask PGMs and a normal PPM per scene");

  auto* run = app.add_subcommand("run", "Execute an experiment config");
  std::string config_path, results_override, aggregate_override, dump_dir;
  run->add_option("config", config_path, "INI experiment config")->required();
  run->add_option("--results", results_override, "Override the JSON Lines results path");
  run->add_option("--aggregate", aggregate_override, "Override the aggregate CSV path");
  run->add_option("--dump-dir", dump_dir, "Write observations, renders and score heatmaps of every run");
  int threads = -1;
  run->add_option("-j,--threads", threads, "Worker threads (0 = all cores; default from config)");

  auto* ablate = app.add_subcommand("ablate", "Run a built-in sweep");
  std::string ablation = "hypotheses", ablate_prefix;
  int ablate_scenes = 20;
  ablate->add_option("sweep", ablation, "physics | translation | hypotheses | occlusion | scene")->capture_default_str();
  ablate->add_option("--scenes", ablate_scenes, "Scenes per grid cell")->capture_default_str()->check(CLI::NonNegativeNumber);
  ablate->add_option("--prefix", ablate_prefix, "Output path prefix (default: sweep name)");
  ablate->add_option("-j,--threads", threads, "Worker threads (0 = all cores)");

  auto* report = app.add_subcommand("report", "Aggregate a results file");
  std::string report_in, report_csv, curve_path;
  std::vector<double> thresholds{5.0, 10.0, 20.0};
  report->add_option("results", report_in, "JSON Lines results file")->required();
  report->add_option("-o,--out", report_csv, "Aggregate CSV path (default: stdout)");
  report->add_option("--thresholds", thresholds, "ADD recall thresholds in mm")->capture_default_str();
  report->add_option("--curve", curve_path, "Write a mean-ADD-per-level plot (PPM)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  try {
    if (*synth) {
      LayoutSpec spec = LayoutSpec::parse(layout);
      if (!kinds.empty()) spec.kinds = detail::split_list(kinds);
      fs::create_directories(out_dir);
      ModelLibrary library;
      for (int i = 0; i < count; ++i) {
        const SyntheticScene scene =
            generate_scene(spec, job_seed(seed, static_cast<std::uint64_t>(i)), library, SimParams{});
        const std::string stem = numbered("scene", static_cast<std::size_t>(i), "");
        save_scene((fs::path(out_dir) / (stem + ".json")).string(), scene);
        if (dump) dump_observation(out_dir, stem, scene.observation);
      }
      if (!quiet) std::cerr << count << " scene(s) -> " << out_dir << "\n";
      return kOk;
    }
    if (*run) {
      ExperimentConfig cfg = load_config(config_path);
      if (!results_override.empty()) cfg.results_path = results_override;
      if (!aggregate_override.empty()) cfg.aggregate_path = aggregate_override;
      if (threads >= 0) cfg.threads = threads;
      return execute(cfg, dump_dir, quiet);
    }
    if (*ablate) {
      ExperimentConfig cfg = builtin_ablation(ablation, ablate_scenes);
      const std::string prefix = ablate_prefix.empty() ? ablation : ablate_prefix;
      cfg.results_path = prefix + ".jsonl";
      cfg.aggregate_path = prefix + ".csv";
      if (threads >= 0) cfg.threads = threads;
      return execute(cfg, "", quiet);
    }
    if (*report) {
      std::ifstream in(report_in);
      if (!in) throw io::IoError("cannot read " + report_in);
      const auto rows = aggregate(read_results(in), thresholds);
      if (report_csv.empty()) {
        write_aggregate_csv(std::cout, rows, thresholds);
      } else {
        std::ofstream out(report_csv);
        if (!out) throw io::IoError("cannot write " + report_csv);
        write_aggregate_csv(out, rows, thresholds);
      }
      if (!curve_path.empty()) io::write_ppm(curve_path, plot_mean_add(rows));
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
