#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "verefine/convex_hull.hpp"
#include "verefine/geometry.hpp"
#include "verefine/harness/mesh_zoo.hpp"
#include "verefine/io.hpp"
#include "verefine/kdtree.hpp"

using namespace verefine;

namespace {

Pose random_pose(Rng& rng) {
  std::uniform_real_distribution<double> ang(0.0, 180.0), off(-0.2, 0.2);
  Pose p = perturb_rotation(Pose{}, ang(rng), rng);
  p.translation = Vec3(off(rng), off(rng), 0.5 + off(rng));
  return p;
}

}  // namespace

TEST(Pose, ComposeWithInverseIsIdentity) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const Pose p = random_pose(rng);
    const Pose e = p * p.inverse();
    EXPECT_LT((e.rotation - Mat3::Identity()).norm(), 1e-12);
    EXPECT_LT(e.translation.norm(), 1e-12);
  }
}

TEST(Pose, ComposeAppliesRightOperandFirst) {
  const Pose a{rotation_about(Vec3::UnitZ(), deg2rad(90)), Vec3(1, 0, 0)};
  const Pose b = Pose::from_translation(Vec3(0, 2, 0));
  const Vec3 x(1, 1, 1);
  EXPECT_LT(((a * b) * x - a * (b * x)).norm(), 1e-12);
}

TEST(Pose, GeodesicAngleOfAxisRotation) {
  Rng rng(5);
  for (double deg : {0.0, 1e-4, 5.0, 45.0, 90.0, 179.0, 180.0}) {
    const Vec3 axis = random_unit_vector(rng);
    EXPECT_NEAR(geodesic_angle_deg(Mat3::Identity(), rotation_about(axis, deg2rad(deg))), deg, 1e-6);
  }
}

TEST(Pose, PerturbationsHaveExactMagnitude) {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const Pose p = random_pose(rng);
    EXPECT_NEAR(rotation_distance_deg(perturb_rotation(p, 20.0, rng), p), 20.0, 1e-7);
    EXPECT_NEAR(translation_distance(perturb_translation(p, 0.02, rng), p), 0.02, 1e-12);
  }
  EXPECT_THROW(perturb_rotation(Pose{}, -1.0, rng), std::invalid_argument);
  EXPECT_THROW(perturb_translation(Pose{}, -1.0, rng), std::invalid_argument);
}

TEST(Pose, NearestRotationProjectsNoisyMatrices) {
  Rng rng(2);
  std::normal_distribution<double> g(0.0, 0.05);
  for (int i = 0; i < 50; ++i) {
    Mat3 m = random_pose(rng).rotation;
    for (int k = 0; k < 9; ++k) m.data()[k] += g(rng);
    const Pose q{nearest_rotation(m), Vec3::Zero()};
    EXPECT_TRUE(q.is_valid(1e-9));
  }
}

TEST(Camera, ProjectionInvertsBackprojection) {
  const CameraIntrinsics k;
  for (int v = 0; v < k.height; v += 37)
    for (int u = 0; u < k.width; u += 41) {
      const Vec3 p = k.backproject(u, v, 0.7);
      const auto px = k.project(p);
      EXPECT_NEAR(px.x(), u + 0.5, 1e-9);
      EXPECT_NEAR(px.y(), v + 0.5, 1e-9);
      EXPECT_DOUBLE_EQ(p.z(), 0.7);
    }
}

TEST(Normals, PlanarDepthGivesPlaneNormalTowardCamera) {
  const CameraIntrinsics k{100, 100, 32, 24, 64, 48};
  const Vec3 n = Vec3(0.2, -0.3, -1.0).normalized();  // faces the camera
  const Plane plane{n, n.dot(Vec3(0, 0, 1.0))};
  DepthImage depth(k.width, k.height, 0.0);
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u) {
      const Vec3 ray = k.backproject(u, v, 1.0);
      depth(u, v) = plane.offset / n.dot(ray);
    }
  const NormalImage normals = estimate_normals(depth, k);
  int checked = 0;
  for (int v = 2; v < k.height - 2; ++v)
    for (int u = 2; u < k.width - 2; ++u) {
      ASSERT_TRUE(normal_defined(normals(u, v)));
      EXPECT_LT((normals(u, v) - n).norm(), 1e-6);
      ++checked;
    }
  EXPECT_GT(checked, 1000);
  EXPECT_FALSE(normal_defined(normals(0, 0)));
}

TEST(Ransac, RecoversPlaneAmongOutliers) {
  Rng rng(9);
  std::uniform_real_distribution<double> xy(-0.5, 0.5), up(0.02, 0.2);
  std::normal_distribution<double> noise(0.0, 0.001);
  const Vec3 n = Vec3(0.1, 0.2, 1.0).normalized();
  const Vec3 t1 = n.unitOrthogonal(), t2 = n.cross(t1);
  const Vec3 origin(0.0, 0.0, 0.8);
  PointCloud cloud;
  for (int i = 0; i < 2000; ++i) cloud.points.push_back(origin + xy(rng) * t1 + xy(rng) * t2 + noise(rng) * n);
  for (int i = 0; i < 800; ++i) cloud.points.push_back(origin + 0.1 * xy(rng) * t1 + 0.1 * xy(rng) * t2 + up(rng) * n);
  const auto fit = fit_support_plane(cloud, 0.005, rng);
  ASSERT_TRUE(fit.has_value());
  EXPECT_GT(fit->plane.normal.dot(n), std::cos(deg2rad(0.5)));  // oriented toward the objects
  EXPECT_NEAR(fit->plane.signed_distance(origin), 0.0, 1e-3);
  EXPECT_NEAR(fit->inlier_ratio, 2000.0 / 2800.0, 0.01);
  EXPECT_TRUE(std::is_sorted(fit->inliers.begin(), fit->inliers.end()));
}

TEST(Ransac, RejectsDegenerateInput) {
  Rng rng(1);
  PointCloud two;
  two.points = {Vec3::Zero(), Vec3::UnitX()};
  EXPECT_THROW(fit_support_plane(two, 0.01, rng), std::invalid_argument);
  PointCloud line;
  for (int i = 0; i < 50; ++i) line.points.push_back(Vec3(0.01 * i, 0, 1));
  EXPECT_FALSE(fit_support_plane(line, 0.001, rng).has_value());
}

TEST(KdTree, MatchesBruteForce) {
  Rng rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t n : {1u, 2u, 7u, 100u, 3000u}) {
    std::vector<Vec3> pts;
    for (std::size_t i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
    const KdTree3 tree(pts);
    for (int q = 0; q < 200; ++q) {
      const Vec3 x(1.5 * u(rng), 1.5 * u(rng), 1.5 * u(rng));
      const auto nb = tree.nearest(x);
      const auto [idx, d] = oracle::nearest(pts, x);
      EXPECT_DOUBLE_EQ(nb.squared_distance, d);
      EXPECT_DOUBLE_EQ((pts[nb.index] - x).squaredNorm(), d);
      (void)idx;
    }
  }
}

TEST(ConvexHull, BoxWithInteriorPoints) {
  Rng rng(4);
  std::uniform_real_distribution<double> in(-0.49, 0.49);
  std::vector<Vec3> pts;
  for (int x : {-1, 1})
    for (int y : {-1, 1})
      for (int z : {-1, 1}) pts.emplace_back(0.5 * x, 1.0 * y, 1.5 * z);
  for (int i = 0; i < 200; ++i) pts.emplace_back(in(rng), 2 * in(rng), 3 * in(rng));
  pts.push_back(Vec3(0.5, 0.0, 0.0));  // on a face
  const auto hull = convex_hull(pts);
  ASSERT_TRUE(hull.has_value());
  EXPECT_EQ(hull->vertices.size(), 8u);
  EXPECT_EQ(hull->planes.size(), 6u);
  ASSERT_EQ(hull->polygons.size(), 6u);
  for (std::size_t f = 0; f < 6; ++f) {
    EXPECT_EQ(hull->polygons[f].size(), 4u);
    const auto& poly = hull->polygons[f];
    const Vec3& n = hull->planes[f].normal;
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Vec3& a = hull->vertices[poly[i]];
      const Vec3& b = hull->vertices[poly[(i + 1) % poly.size()]];
      const Vec3& c = hull->vertices[poly[(i + 2) % poly.size()]];
      EXPECT_GT((b - a).cross(c - b).dot(n), 0.0);
    }
  }
  for (const auto& p : pts) EXPECT_LE(hull->signed_distance(p), 1e-9);
}

TEST(ConvexHull, MassPropertiesOfBox) {
  const double a = 0.08, b = 0.05, c = 0.04, m = 2.0;
  const auto mesh = zoo::box(a, b, c);
  auto hull = convex_hull(mesh.vertices);
  ASSERT_TRUE(hull);
  const auto mp = mass_properties(*hull, m);
  EXPECT_NEAR(mp.volume, a * b * c, 1e-15);
  EXPECT_LT(mp.center.norm(), 1e-12);
  EXPECT_NEAR(mp.inertia(0, 0), m * (b * b + c * c) / 12.0, 1e-12);
  EXPECT_NEAR(mp.inertia(1, 1), m * (a * a + c * c) / 12.0, 1e-12);
  EXPECT_NEAR(mp.inertia(2, 2), m * (a * a + b * b) / 12.0, 1e-12);
  EXPECT_NEAR(mp.inertia(0, 1), 0.0, 1e-12);
}

TEST(ConvexHull, MassPropertiesOfWedgeCentroid) {
  const auto mesh = zoo::wedge(0.08, 0.05, 0.04);
  auto hull = convex_hull(mesh.vertices);
  ASSERT_TRUE(hull);
  const auto mp = mass_properties(*hull, 1.0);
  EXPECT_NEAR(mp.volume, 0.5 * 0.08 * 0.04 * 0.05, 1e-15);
  // triangle centroid in (x, z): mean of (-x,-z), (x,-z), (-x,z)
  EXPECT_NEAR(mp.center.x(), -0.04 / 3.0, 1e-12);
  EXPECT_NEAR(mp.center.z(), -0.02 / 3.0, 1e-12);
  EXPECT_NEAR(mp.center.y(), 0.0, 1e-12);
}

TEST(ConvexHull, FlatInputHasNoHull) {
  std::vector<Vec3> flat{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {0.5, 0.5, 0}};
  EXPECT_FALSE(convex_hull(flat).has_value());
  EXPECT_FALSE(convex_hull(std::vector<Vec3>{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}).has_value());
}

TEST(Mesh, ZooMeshesAreValidAndClosed) {
  for (auto kind : zoo::all_kinds()) {
    const auto m = zoo::make(kind);
    EXPECT_EQ(m.validation_error(), "") << zoo::to_string(kind);
    EXPECT_GT(m.surface_area(), 0.0);
  }
  EXPECT_NEAR(zoo::box(1, 2, 3).surface_area(), 2 * (2 + 6 + 3), 1e-12);
}

TEST(Mesh, ValidationReportsViolations) {
  TriangleMesh m = zoo::box(1, 1, 1);
  m.triangles.push_back({0, 1, 999});
  EXPECT_NE(m.validation_error(), "");
  EXPECT_THROW(m.validate(), std::invalid_argument);
  TriangleMesh n = zoo::box(1, 1, 1);
  n.normals.pop_back();
  EXPECT_NE(n.validation_error(), "");
}

TEST(Io, ObjRoundTrip) {
  const auto mesh = zoo::make(zoo::Kind::l_shape);
  std::stringstream ss;
  io::write_obj(ss, mesh);
  const auto back = io::parse_obj(ss);
  ASSERT_EQ(back.triangles.size(), mesh.triangles.size());
  EXPECT_NEAR(back.surface_area(), mesh.surface_area(), 1e-9);
}

TEST(Io, ObjNegativeIndicesAndErrors) {
  std::stringstream ss("# square\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4 -3 -2\nf 1/1 3/3 4/4\n");
  const auto m = io::parse_obj(ss);
  EXPECT_EQ(m.triangles.size(), 2u);
  EXPECT_NEAR(m.surface_area(), 1.0, 1e-12);
  for (const auto& n : m.normals) EXPECT_NEAR(n.z(), 1.0, 1e-12);
  std::stringstream range("v 0 0 0\nf 1 2 3\n");
  EXPECT_THROW(io::parse_obj(range), io::IoError);
  std::stringstream quad("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
  EXPECT_THROW(io::parse_obj(quad), io::IoError);
}

TEST(Io, DepthPgmStoresMillimeters) {
  const auto dir = std::filesystem::temp_directory_path();
  DepthImage d(5, 4, 0.0);
  d(1, 1) = 0.5;
  d(2, 3) = 1.2344;
  d(4, 0) = 70.0;  // saturates
  const auto path = (dir / "verefine_test_depth.pgm").string();
  io::write_depth_pgm(path, d);
  const auto back = io::read_depth_pgm(path);
  ASSERT_EQ(back.width(), 5);
  EXPECT_DOUBLE_EQ(back(1, 1), 0.5);
  EXPECT_NEAR(back(2, 3), 1.234, 1e-12);
  EXPECT_DOUBLE_EQ(back(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(back(4, 0), 65.535);
  Mask m(3, 2, 0);
  m(2, 1) = 1;
  io::write_mask_pgm((dir / "verefine_test_mask.pgm").string(), m);
  EXPECT_EQ(io::read_mask_pgm((dir / "verefine_test_mask.pgm").string()), m);
  EXPECT_THROW(io::read_depth_pgm((dir / "verefine_missing.pgm").string()), io::IoError);
}
