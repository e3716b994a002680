#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "verefine/geometry.hpp"
#include "verefine/kdtree.hpp"

namespace verefine {

enum class RefinerKind { icp, trimmed_icp };

inline std::string to_string(RefinerKind k) { return k == RefinerKind::icp ? "icp" : "trimmed_icp"; }

inline RefinerKind refiner_kind_from_string(const std::string& s) {
  if (s == "icp") return RefinerKind::icp;
  if (s == "trimmed_icp" || s == "tricp") return RefinerKind::trimmed_icp;
  throw std::invalid_argument("unknown refiner kind '" + s + "'");
}

struct RefinerConfig {
  RefinerKind kind = RefinerKind::icp;
  int inner_steps_per_call = 10;
  double trim_fraction = 0.2;  // trimmed_icp only
  double max_correspondence_distance = 0.02;
  std::size_t model_samples = 2048;
  std::size_t max_observed_points = 2048;  // 0 keeps every observed point
  std::uint64_t sampling_seed = 7;

  /// Fraction of correspondences actually discarded by this configuration.
  double effective_trim() const { return kind == RefinerKind::trimmed_icp ? trim_fraction : 0.0; }

  void validate() const {
    if (inner_steps_per_call < 1) throw std::invalid_argument("RefinerConfig: inner_steps_per_call must be >= 1");
    if (!(trim_fraction >= 0.0 && trim_fraction < 1.0)) throw std::invalid_argument("RefinerConfig: trim_fraction must be in [0, 1)");
    if (!(max_correspondence_distance > 0.0)) throw std::invalid_argument("RefinerConfig: max_correspondence_distance must be positive");
    if (model_samples < 3) throw std::invalid_argument("RefinerConfig: model_samples must be >= 3");
  }
};

/// Area-weighted uniform samples on the mesh surface, deterministic in `seed`.
inline std::vector<Vec3> sample_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed) {
  mesh.validate();
  std::vector<double> cumulative(mesh.triangles.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    acc += 0.5 * (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]).norm();
    cumulative[i] = acc;
  }
  if (!(acc > 0.0)) throw std::invalid_argument("sample_surface: mesh has zero area");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vec3> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const double r = unit(rng) * acc;
    const auto idx = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin());
    const auto& t = mesh.triangles[std::min(idx, mesh.triangles.size() - 1)];
    double a = unit(rng), b = unit(rng);
    if (a + b > 1.0) {
      a = 1.0 - a;
      b = 1.0 - b;
    }
    out.push_back(mesh.vertices[t[0]] + a * (mesh.vertices[t[1]] - mesh.vertices[t[0]]) +
                  b * (mesh.vertices[t[2]] - mesh.vertices[t[0]]));
  }
  return out;
}

/// Model-frame point set with its spatial index. Correspondence search maps observed points
/// into the object frame, so the index never has to follow the pose.
class ModelPoints {
 public:
  ModelPoints() = default;
  explicit ModelPoints(std::vector<Vec3> points) : index_(std::move(points)) {}
  ModelPoints(const TriangleMesh& mesh, const RefinerConfig& cfg)
      : ModelPoints(sample_surface(mesh, cfg.model_samples, cfg.sampling_seed)) {}

  const std::vector<Vec3>& points() const { return index_.points(); }
  const KdTree3& index() const { return index_; }
  std::size_t size() const { return index_.size(); }

 private:
  KdTree3 index_;
};

/// Paired points: observed[i] should coincide with the transformed model[i].
struct Correspondences {
  std::vector<Vec3> observed;
  std::vector<Vec3> model;
  std::vector<double> residuals;

  std::size_t size() const { return observed.size(); }

  double mean_squared_residual() const {
    double s = 0.0;
    for (double r : residuals) s += r * r;
    return residuals.empty() ? 0.0 : s / static_cast<double>(residuals.size());
  }
};

/// Least-squares rigid transform (R, t) minimizing sum ||observed_i - (R model_i + t)||^2, with
/// R forced proper. nullopt for fewer than 3 pairs or collinear model points.
inline std::optional<Pose> alignment_from_correspondences(const Correspondences& c) {
  if (c.observed.size() != c.model.size()) throw std::invalid_argument("alignment: mismatched correspondence lists");
  const std::size_t n = c.size();
  if (n < 3) return std::nullopt;
  Vec3 ca = Vec3::Zero(), cb = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    ca += c.observed[i];
    cb += c.model[i];
  }
  ca /= static_cast<double>(n);
  cb /= static_cast<double>(n);
  Mat3 h = Mat3::Zero();
  Mat3 spread = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 b = c.model[i] - cb;
    h += b * (c.observed[i] - ca).transpose();
    spread += b * b.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(spread);
  const auto ev = es.eigenvalues();
  if (!(ev(2) > 0.0) || ev(1) <= 1e-12 * ev(2)) return std::nullopt;

  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Mat3 r = v * d * u.transpose();
  return Pose{r, ca - r * cb};
}

/// Per-inner-iteration diagnostics of one refine call.
struct IcpResult {
  Pose pose;
  int steps_run = 0;
  std::vector<double> mse_matched;  // after correspondence search
  std::vector<double> mse_aligned;  // same pairs after the alignment update
  std::size_t last_correspondences = 0;
};

namespace detail {
inline std::vector<Vec3> subsample(const std::vector<Vec3>& pts, std::size_t max_points) {
  if (max_points == 0 || pts.size() <= max_points) return pts;
  std::vector<Vec3> out;
  out.reserve(max_points);
  for (std::size_t i = 0; i < max_points; ++i) out.push_back(pts[i * pts.size() / max_points]);
  return out;
}

/// Keeps the (1 - trim) fraction with the smallest residuals; input order is preserved.
inline void trim_worst(Correspondences& c, double trim) {
  const auto drop = static_cast<std::size_t>(std::floor(trim * static_cast<double>(c.size())));
  if (drop == 0) return;
  std::vector<double> sorted = c.residuals;
  const std::size_t keep = c.size() - drop;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(keep - 1), sorted.end());
  const double cutoff = sorted[keep - 1];
  std::size_t below = 0;
  for (double r : c.residuals) below += r < cutoff;
  std::size_t ties_allowed = keep - below;
  Correspondences out;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double r = c.residuals[i];
    if (r < cutoff || (r == cutoff && ties_allowed > 0)) {
      if (r == cutoff) --ties_allowed;
      out.observed.push_back(c.observed[i]);
      out.model.push_back(c.model[i]);
      out.residuals.push_back(r);
    }
  }
  c = std::move(out);
}
}  // namespace detail

/// Object-frame correspondences for the current pose: nearest model point per observed point,
/// gated by the maximum correspondence distance, then trimmed.
inline Correspondences find_correspondences(const std::vector<Vec3>& observed, const ModelPoints& model,
                                            const Pose& pose, const RefinerConfig& cfg) {
  const Pose inv = pose.inverse();
  const double max_sq = cfg.max_correspondence_distance * cfg.max_correspondence_distance;
  Correspondences c;
  for (const auto& q : observed) {
    const Vec3 qm = inv * q;
    const auto nb = model.index().nearest(qm);
    if (nb.squared_distance > max_sq) continue;
    c.observed.push_back(qm);
    c.model.push_back(model.points()[nb.index]);
    c.residuals.push_back(std::sqrt(nb.squared_distance));
  }
  detail::trim_worst(c, cfg.effective_trim());
  return c;
}

/// Runs cfg.inner_steps_per_call (trimmed) point-to-point ICP iterations from `pose`. The input
/// pose comes back unchanged when fewer than 3 correspondences survive the first search.
inline IcpResult refine_icp(const PointCloud& observed, const ModelPoints& model, const Pose& pose,
                            const RefinerConfig& cfg) {
  cfg.validate();
  IcpResult res{pose};
  if (observed.empty() || model.size() < 3) return res;
  const std::vector<Vec3> obs = detail::subsample(observed.points, cfg.max_observed_points);
  for (int step = 0; step < cfg.inner_steps_per_call; ++step) {
    Correspondences c = find_correspondences(obs, model, res.pose, cfg);
    res.last_correspondences = c.size();
    if (c.size() < 3) break;
    const auto delta = alignment_from_correspondences(c);
    if (!delta) break;
    res.mse_matched.push_back(c.mean_squared_residual());
    double aligned = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) aligned += (c.observed[i] - (*delta) * c.model[i]).squaredNorm();
    res.mse_aligned.push_back(aligned / static_cast<double>(c.size()));
    res.pose = compose(res.pose, *delta);
    ++res.steps_run;
  }
  return res;
}

inline Pose refine_step(const PointCloud& observed, const ModelPoints& model, const Pose& pose, const RefinerConfig& cfg) {
  return refine_icp(observed, model, pose, cfg).pose;
}

}  // namespace verefine
