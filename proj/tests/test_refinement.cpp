#include <gtest/gtest.h>

#include "verefine/harness/mesh_zoo.hpp"
#include "verefine/refinement.hpp"

using namespace verefine;

namespace {

PointCloud cloud_at(const std::vector<Vec3>& model, const Pose& pose) {
  PointCloud c;
  for (const auto& p : model) c.points.push_back(pose * p);
  return c;
}

}  // namespace

TEST(Alignment, RecoversRandomTransformExactly) {
  Rng rng(1);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (int trial = 0; trial < 50; ++trial) {
    Pose t = perturb_rotation(Pose{}, 170.0 * (trial + 1) / 50.0, rng);
    t.translation = Vec3(u(rng), u(rng), u(rng));
    Correspondences c;
    for (int i = 0; i < 30; ++i) {
      const Vec3 m(u(rng), u(rng), u(rng));
      c.model.push_back(m);
      c.observed.push_back(t * m);
      c.residuals.push_back(0.0);
    }
    const auto est = alignment_from_correspondences(c);
    ASSERT_TRUE(est);
    EXPECT_LT((est->rotation - t.rotation).norm(), 1e-9);
    EXPECT_LT((est->translation - t.translation).norm(), 1e-9);
    EXPECT_NEAR(est->rotation.determinant(), 1.0, 1e-12);
  }
}

TEST(Alignment, DegenerateInputs) {
  Correspondences two;
  two.model = {Vec3::Zero(), Vec3::UnitX()};
  two.observed = two.model;
  two.residuals = {0, 0};
  EXPECT_FALSE(alignment_from_correspondences(two));
  Correspondences line;
  for (int i = 0; i < 5; ++i) {
    line.model.push_back(Vec3(i, 0, 0));
    line.observed.push_back(Vec3(i, 0, 0));
    line.residuals.push_back(0);
  }
  EXPECT_FALSE(alignment_from_correspondences(line));
}

TEST(Alignment, ReflectionIsNeverReturned) {
  // mirrored planar data tempts an improper solution
  Correspondences c;
  for (int i = 0; i < 4; ++i) {
    const Vec3 m(std::cos(i * 1.3), std::sin(i * 1.3), 0.01 * i);
    c.model.push_back(m);
    c.observed.push_back(Vec3(m.x(), m.y(), -m.z()));
    c.residuals.push_back(0);
  }
  const auto est = alignment_from_correspondences(c);
  ASSERT_TRUE(est);
  EXPECT_NEAR(est->rotation.determinant(), 1.0, 1e-9);
}

TEST(Trim, KeepsSmallestResiduals) {
  Correspondences c;
  for (int i = 0; i < 10; ++i) {
    c.observed.push_back(Vec3(i, 0, 0));
    c.model.push_back(Vec3(i, 0, 0));
    c.residuals.push_back((i * 7) % 10);
  }
  detail::trim_worst(c, 0.2);
  ASSERT_EQ(c.size(), 8u);
  for (double r : c.residuals) EXPECT_LT(r, 8.0);
  Correspondences ties;
  for (int i = 0; i < 10; ++i) {
    ties.observed.push_back(Vec3::Zero());
    ties.model.push_back(Vec3::Zero());
    ties.residuals.push_back(1.0);
  }
  detail::trim_worst(ties, 0.35);
  EXPECT_EQ(ties.size(), 7u);
}

TEST(Sampling, DeterministicAndOnSurface) {
  const auto mesh = zoo::box(0.08, 0.05, 0.04);
  const auto a = sample_surface(mesh, 500, 3), b = sample_surface(mesh, 500, 3), c = sample_surface(mesh, 500, 4);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (const auto& p : a) {
    const Vec3 q = p.cwiseAbs().cwiseQuotient(Vec3(0.04, 0.025, 0.02));
    EXPECT_LE(q.maxCoeff(), 1.0 + 1e-9);
    EXPECT_NEAR(q.maxCoeff(), 1.0, 1e-9);  // on some face
  }
}

TEST(Icp, ConvergesOnNoiselessCloud) {
  RefinerConfig cfg;
  cfg.inner_steps_per_call = 50;
  Rng rng(12);
  for (auto kind : zoo::all_kinds()) {
    const auto mesh = zoo::make(kind);
    const ModelPoints model(mesh, cfg);
    Pose truth = perturb_rotation(Pose{}, 30.0, rng);
    truth.translation = Vec3(0.01, -0.02, 0.5);
    const Pose init = perturb_translation(perturb_rotation(truth, 5.0, rng), 0.005, rng);
    const Pose est = refine_step(cloud_at(model.points(), truth), model, init, cfg);
    EXPECT_LT(rotation_distance_deg(est, truth), 0.1) << zoo::to_string(kind);
    EXPECT_LT(translation_distance(est, truth), 1e-4) << zoo::to_string(kind);
  }
}

TEST(Icp, IndependentSamplingLocksTranslation) {
  RefinerConfig cfg;
  cfg.inner_steps_per_call = 50;
  Rng rng(12);
  for (auto kind : zoo::all_kinds()) {
    const auto mesh = zoo::make(kind);
    const ModelPoints model(mesh, cfg);
    const Pose truth = Pose::from_translation(Vec3(0.01, -0.02, 0.5));
    const PointCloud obs = cloud_at(sample_surface(mesh, 1500, 99), truth);
    const Pose init = perturb_translation(perturb_rotation(truth, 5.0, rng), 0.005, rng);
    EXPECT_LT(translation_distance(refine_step(obs, model, init, cfg), truth), 1e-3) << zoo::to_string(kind);
  }
}

TEST(Icp, EachStepDoesNotIncreaseMatchedError) {
  RefinerConfig cfg;
  cfg.inner_steps_per_call = 20;
  const auto mesh = zoo::make(zoo::Kind::l_shape);
  const ModelPoints model(mesh, cfg);
  Rng rng(3);
  const Pose truth = Pose::from_translation(Vec3(0, 0, 0.5));
  const PointCloud obs = cloud_at(sample_surface(mesh, 800, 5), truth);
  const auto res = refine_icp(obs, model, perturb_rotation(truth, 8.0, rng), cfg);
  ASSERT_EQ(res.steps_run, 20);
  for (int i = 0; i < res.steps_run; ++i) EXPECT_LE(res.mse_aligned[i], res.mse_matched[i] + 1e-15);
  for (int i = 1; i < res.steps_run; ++i) EXPECT_LE(res.mse_matched[i], res.mse_aligned[i - 1] + 1e-15);
}

TEST(Icp, TrimmedVariantToleratesOutliers) {
  RefinerConfig plain_cfg;
  plain_cfg.inner_steps_per_call = 40;
  plain_cfg.max_correspondence_distance = 0.05;
  RefinerConfig trimmed = plain_cfg;
  trimmed.kind = RefinerKind::trimmed_icp;
  trimmed.trim_fraction = 0.3;
  const auto mesh = zoo::make(zoo::Kind::box);
  const ModelPoints model(mesh, plain_cfg);
  Rng rng(7);
  const Pose truth = Pose::from_translation(Vec3(0, 0, 0.5));
  PointCloud obs = cloud_at(sample_surface(mesh, 700, 8), truth);
  for (int i = 0; i < 200; ++i) obs.points.push_back(truth * Vec3(0.06, 0.0, 0.0) + 0.02 * random_unit_vector(rng));
  const Pose init = perturb_translation(truth, 0.004, rng);
  const double e_plain = translation_distance(refine_step(obs, model, init, plain_cfg), truth);
  const double e_trim = translation_distance(refine_step(obs, model, init, trimmed), truth);
  EXPECT_LT(e_trim, e_plain);
  EXPECT_LT(e_trim, 2e-3);
}

TEST(Icp, EmptyInputReturnsInputPose) {
  RefinerConfig cfg;
  const ModelPoints model(zoo::box(0.1, 0.1, 0.1), cfg);
  const Pose p = Pose::from_translation(Vec3(1, 2, 3));
  EXPECT_EQ(refine_step(PointCloud{}, model, p, cfg), p);
  PointCloud far;
  far.points = {Vec3(10, 10, 10), Vec3(11, 10, 10), Vec3(10, 11, 10)};
  EXPECT_EQ(refine_step(far, model, p, cfg), p);
}

TEST(RefinerConfig, ParsingAndValidation) {
  EXPECT_EQ(refiner_kind_from_string("icp"), RefinerKind::icp);
  EXPECT_EQ(refiner_kind_from_string("trimmed_icp"), RefinerKind::trimmed_icp);
  EXPECT_THROW(refiner_kind_from_string("gicp"), std::invalid_argument);
  RefinerConfig c;
  EXPECT_DOUBLE_EQ(c.effective_trim(), 0.0);
  c.kind = RefinerKind::trimmed_icp;
  EXPECT_DOUBLE_EQ(c.effective_trim(), 0.2);
  c.trim_fraction = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  RefinerConfig d;
  d.inner_steps_per_call = 0;
  EXPECT_THROW(d.validate(), std::invalid_argument);
}
