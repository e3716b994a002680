#include <gtest/gtest.h>

#include "oracles.hpp"
#include "verefine/harness/mesh_zoo.hpp"
#include "verefine/verification.hpp"

using namespace verefine;

namespace {

const CameraIntrinsics kCam{300, 300, 80, 60, 160, 120};

Observation observe(const TriangleMesh& mesh, const Pose& pose) {
  RenderBuffer r = render(mesh, pose, kCam);
  Observation obs;
  obs.intrinsics = kCam;
  obs.depth = r.depth;
  obs.normals = r.normal;
  Mask m(kCam.width, kCam.height, 0);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = r.hit(i);
  obs.masks = {m};
  return obs;
}

}  // namespace

TEST(Score, DefaultThresholds) {
  const ScoreParams p;
  EXPECT_DOUBLE_EQ(p.tau, 0.020);
  EXPECT_NEAR(p.alpha, 1.0 - std::cos(std::numbers::pi / 4), 1e-15);
  EXPECT_NEAR(ScoreParams::alpha_from_degrees(45.0), p.alpha, 1e-15);
  EXPECT_THROW((ScoreParams{0.0, 0.1}.validate()), std::invalid_argument);
  EXPECT_THROW((ScoreParams{0.01, 0.0}.validate()), std::invalid_argument);
}

TEST(Score, TermsAreSoftThresholds) {
  EXPECT_DOUBLE_EQ(depth_term(1.0, 1.0, 0.02), 1.0);
  EXPECT_NEAR(depth_term(1.0, 1.01, 0.02), 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(depth_term(1.0, 1.02, 0.02), 0.0);
  EXPECT_DOUBLE_EQ(depth_term(1.0, 0.5, 0.02), 0.0);
  const double alpha = ScoreParams{}.alpha;
  const Vec3 n(0, 0, -1);
  EXPECT_DOUBLE_EQ(normal_term(n, n, alpha), 1.0);
  const Vec3 tilted = rotation_about(Vec3::UnitX(), deg2rad(45)) * n;
  EXPECT_NEAR(normal_term(n, tilted, alpha), 0.0, 1e-12);
  const Vec3 half = rotation_about(Vec3::UnitX(), std::acos(1.0 - alpha / 2)) * n;
  EXPECT_NEAR(normal_term(n, half, alpha), 0.5, 1e-12);
}

TEST(Score, PerfectFitScoresOne) {
  Rng rng(2);
  for (auto kind : zoo::all_kinds()) {
    Pose pose = perturb_rotation(Pose{}, 60.0, rng);
    pose.translation = Vec3(0, 0, 0.4);
    const auto mesh = zoo::make(kind);
    const auto obs = observe(mesh, pose);
    EXPECT_NEAR(fit_score(obs, render(mesh, pose, kCam), obs.masks[0], {}), 1.0, 1e-12);
  }
}

TEST(Score, UniformOffsetHalvesDepthTerm) {
  const auto mesh = zoo::box(0.1, 0.1, 0.02);
  const Pose pose = Pose::from_translation(Vec3(0, 0, 0.4));
  Observation obs = observe(mesh, pose);
  for (auto& d : obs.depth.data())
    if (d > 0.0) d += 0.010;
  // depth term 0.5, normal term 1
  EXPECT_NEAR(fit_score(obs, render(mesh, pose, kCam), obs.masks[0], {}), 0.75, 1e-9);
}

TEST(Score, MatchesNaiveOracleOnRandomHypotheses) {
  Rng rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const auto kind = zoo::all_kinds()[trial % 4];
    const auto mesh = zoo::make(kind);
    Pose truth = perturb_rotation(Pose{}, 90.0 * u(rng), rng);
    truth.translation = Vec3(0.02 * (u(rng) - 0.5), 0.02 * (u(rng) - 0.5), 0.35 + 0.1 * u(rng));
    Observation obs = observe(mesh, truth);
    for (std::size_t i = 0; i < obs.depth.size(); ++i) {
      if (u(rng) < 0.05) obs.depth[i] = 0.0;
      if (u(rng) < 0.05) obs.normals[i] = Vec3::Zero();
      if (obs.depth[i] > 0.0) obs.depth[i] += 0.004 * (u(rng) - 0.5);
    }
    const Pose hyp = perturb_translation(perturb_rotation(truth, 15.0 * u(rng), rng), 0.01 * u(rng), rng);
    const ScoreParams p{0.005 + 0.03 * u(rng), 0.05 + 0.5 * u(rng)};
    const auto r = render(mesh, hyp, kCam);
    EXPECT_NEAR(fit_score(obs, r, obs.masks[0], p), oracle::fit_score(obs, r, obs.masks[0], p.tau, p.alpha), 1e-12);
  }
}

TEST(Score, BoundedAndZeroForMisses) {
  const auto mesh = zoo::box(0.05, 0.05, 0.05);
  const Pose pose = Pose::from_translation(Vec3(0, 0, 0.4));
  const auto obs = observe(mesh, pose);
  const auto away = render(mesh, Pose::from_translation(Vec3(0.5, 0, 0.4)), kCam);
  EXPECT_DOUBLE_EQ(fit_score(obs, away, obs.masks[0], {}), 0.0);
  const Mask empty(kCam.width, kCam.height, 0);
  EXPECT_DOUBLE_EQ(fit_score(obs, away, empty, {}), 0.0);
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const double s = fit_score(obs, render(mesh, perturb_translation(pose, 0.01, rng), kCam), obs.masks[0], {});
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(Score, ScoreMapAveragesToFitScore) {
  const auto mesh = zoo::make(zoo::Kind::wedge);
  Rng rng(5);
  Pose truth = perturb_rotation(Pose{}, 40.0, rng);
  truth.translation = Vec3(0, 0, 0.35);
  const auto obs = observe(mesh, truth);
  const auto r = render(mesh, perturb_rotation(truth, 8.0, rng), kCam);
  const auto map = score_map(obs, r, obs.masks[0], {});
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : map.data())
    if (!std::isnan(v)) sum += v, ++n;
  ASSERT_GT(n, 0u);
  EXPECT_NEAR(sum / n, fit_score(obs, r, obs.masks[0], {}), 1e-12);
}

TEST(Score, SceneScoreUsesUnionMask) {
  const auto a = zoo::box(0.04, 0.04, 0.04);
  const Pose pa = Pose::from_translation(Vec3(-0.05, 0, 0.4)), pb = Pose::from_translation(Vec3(0.05, 0, 0.4));
  const std::vector<RenderInstance> inst{{&a, pa, 0}, {&a, pb, 1}};
  const RenderBuffer both = render(inst, kCam);
  Observation obs;
  obs.intrinsics = kCam;
  obs.depth = both.depth;
  obs.normals = both.normal;
  Mask ma(kCam.width, kCam.height, 0), mb = ma;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    ma[i] = both.instance[i] == 0;
    mb[i] = both.instance[i] == 1;
  }
  obs.masks = {ma, mb};
  EXPECT_NEAR(scene_fit_score(obs, both, {}), 1.0, 1e-12);
  const RenderBuffer only_a = render(a, pa, kCam);
  EXPECT_NEAR(scene_fit_score(obs, only_a, {}), 0.5, 0.01);
  EXPECT_EQ(count_set(obs.union_mask()), count_set(ma) + count_set(mb));
}

TEST(Score, RejectsMismatchedShapes) {
  const auto mesh = zoo::box(0.05, 0.05, 0.05);
  const auto obs = observe(mesh, Pose::from_translation(Vec3(0, 0, 0.4)));
  const auto r = render(mesh, Pose::from_translation(Vec3(0, 0, 0.4)), CameraIntrinsics{300, 300, 40, 30, 80, 60});
  EXPECT_THROW(fit_score(obs, r, obs.masks[0], {}), std::invalid_argument);
}

TEST(Observation, FromDepthEstimatesNormals) {
  const auto mesh = zoo::box(0.1, 0.1, 0.1);
  const auto r = render(mesh, Pose::from_translation(Vec3(0, 0, 0.5)), kCam);
  Mask m(kCam.width, kCam.height, 0);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = r.hit(i);
  const auto obs = Observation::from_depth(r.depth, kCam, {m});
  EXPECT_LT((obs.normals(80, 60) - Vec3(0, 0, -1)).norm(), 1e-6);
  EXPECT_EQ(obs.segment_cloud(0).size(), count_set(m));
}
