#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "t6d/geometry.hpp"
#include "test_support.hpp"

using namespace t6d;
using t6d::testing::cube_corners;

TEST(Rot6D, CanonicalAxesDecodeToIdentity) {
  const Rotation r = rot6d_to_matrix({Vec3(1, 0, 0), Vec3(0, 1, 0)});
  EXPECT_LT((r.m - Mat3::Identity()).norm(), 1e-15);
}

TEST(Rot6D, ScaledAxesDecodeToIdentity) {
  const Rotation r = rot6d_to_matrix({Vec3(2, 0, 0), Vec3(0, 3, 0)});
  EXPECT_LT((r.m - Mat3::Identity()).norm(), 1e-15);
}

TEST(Rot6D, EncodeReadsFirstTwoColumns) {
  const Rot6D id = matrix_to_rot6d(Rotation::identity());
  EXPECT_EQ(id.a1, Vec3(1, 0, 0));
  EXPECT_EQ(id.a2, Vec3(0, 1, 0));

  const Rot6D z90 = matrix_to_rot6d(axis_angle(Vec3::UnitZ(), M_PI / 2));
  EXPECT_NEAR((z90.a1 - Vec3(0, 1, 0)).norm(), 0.0, 1e-15);
  EXPECT_NEAR((z90.a2 - Vec3(-1, 0, 0)).norm(), 0.0, 1e-15);
}

TEST(Rot6D, DegenerateInputsThrow) {
  EXPECT_THROW(rot6d_to_matrix({Vec3::Zero(), Vec3(0, 1, 0)}), DegenerateInput);
  EXPECT_THROW(rot6d_to_matrix({Vec3(1, 0, 0), Vec3(2, 0, 0)}), DegenerateInput);
}

TEST(Rot6D, DecodedMatrixIsARotationSpanningTheInputPlane) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    const Rot6D r{Vec3(n(rng), n(rng), n(rng)), Vec3(n(rng), n(rng), n(rng))};
    const Rotation m = rot6d_to_matrix(r);
    EXPECT_TRUE(m.is_valid(1e-9));
    // the third column is normal to the (a1, a2) plane
    EXPECT_NEAR(m.m.col(2).dot(r.a1), 0.0, 1e-9);
    EXPECT_NEAR(m.m.col(2).dot(r.a2), 0.0, 1e-9);
  }
}

TEST(Rot6D, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < 20; ++k) {
    Rot6D r{Vec3(n(rng), n(rng), n(rng)), Vec3(n(rng), n(rng), n(rng))};
    Mat3 upstream;
    for (int i = 0; i < 9; ++i) upstream(i / 3, i % 3) = n(rng);
    const auto grad = rot6d_backward(r, upstream);
    auto arr = r.to_array();
    for (int i = 0; i < 6; ++i) {
      auto f = [&] { return (rot6d_to_matrix(Rot6D::from_array(arr)).m.cwiseProduct(upstream)).sum(); };
      const double fd = t6d::testing::central_difference(f, arr[i], 1e-6);
      EXPECT_LT(t6d::testing::relative_error(grad[i], fd), 1e-6) << "component " << i;
    }
  }
}

TEST(Rotation, RandomRotationsAreValid) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 500; ++k) EXPECT_TRUE(random_rotation(rng).is_valid(1e-9));
}

TEST(Rotation, AngularDistance) {
  const Rotation a = axis_angle(Vec3(1, 2, 3), 0.7);
  EXPECT_NEAR(angular_distance(a, a), 0.0, 1e-7);
  EXPECT_NEAR(angular_distance(Rotation::identity(), axis_angle(Vec3::UnitY(), 1.2)), 1.2, 1e-12);
  EXPECT_NEAR(angular_distance(Rotation::identity(), axis_angle(Vec3::UnitX(), M_PI)), M_PI, 1e-7);
}

TEST(Allocentric, OnAxisObjectKeepsItsRotation) {
  const Pose ego{axis_angle(Vec3(0.3, -1, 0.2), 1.1), Vec3(0, 0, 1)};
  const Pose allo = egocentric_to_allocentric(ego);
  EXPECT_LT((allo.rotation.m - ego.rotation.m).norm(), 1e-15);
}

TEST(Allocentric, ViewRotationDependsOnlyOnDirection) {
  const Rotation a = view_rotation(Vec3(1, 0, 1));
  for (double s : {0.01, 0.5, 3.0, 100.0}) EXPECT_LT((view_rotation(Vec3(1, 0, 1) * s).m - a.m).norm(), 1e-15);
  // it maps the optical axis onto the bearing
  EXPECT_LT((a.m * Vec3::UnitZ() - Vec3(1, 0, 1).normalized()).norm(), 1e-15);
}

TEST(Allocentric, RoundTripIsIdentity) {
  std::mt19937_64 rng(17);
  for (int k = 0; k < 1000; ++k) {
    const Pose ego{random_rotation(rng), t6d::testing::random_vec(rng, -1, 1)};
    const Pose back = allocentric_to_egocentric(egocentric_to_allocentric(ego));
    EXPECT_LT((back.rotation.m - ego.rotation.m).norm(), 1e-9);
  }
}

TEST(Allocentric, ObjectAtOriginThrows) {
  EXPECT_THROW(egocentric_to_allocentric({Rotation::identity(), Vec3::Zero()}), DegenerateInput);
}

TEST(Allocentric, ObjectBehindCameraOnAxis) {
  const Pose ego{axis_angle(Vec3::UnitY(), 0.4), Vec3(0, 0, -2)};
  const Pose back = allocentric_to_egocentric(egocentric_to_allocentric(ego));
  EXPECT_LT((back.rotation.m - ego.rotation.m).norm(), 1e-12);
}

TEST(ModelPointsTest, DiameterOfUnitCubeCorners) {
  const ModelPoints mp(cube_corners(0.5), false);
  EXPECT_NEAR(mp.diameter(), std::sqrt(3.0), 1e-15);
}

TEST(ModelPointsTest, EmptyThrows) { EXPECT_THROW(ModelPoints({}, false), EmptyMesh); }

TEST(ModelPointsTest, DiameterInvariantUnderRigidTransform) {
  std::mt19937_64 rng(23);
  const ModelPoints mp(t6d::testing::random_cloud(rng, 150), false);
  for (int k = 0; k < 10; ++k) {
    const Pose p{random_rotation(rng), t6d::testing::random_vec(rng, -1, 1)};
    const ModelPoints moved(transform_points(mp, p), false);
    EXPECT_NEAR(moved.diameter(), mp.diameter(), 1e-9);
  }
}

TEST(Subsample, FewerVerticesThanRequestedReturnsAll) {
  std::mt19937_64 rng(1);
  const auto v = t6d::testing::random_cloud(rng, 10);
  const auto mp = subsample_points(v, 1500, 0);
  ASSERT_EQ(mp.size(), 10u);
  EXPECT_EQ(mp.points(), v);
}

TEST(Subsample, CubeCornersDiameter) {
  for (std::size_t k : {8u, 20u, 1500u}) EXPECT_NEAR(subsample_points(cube_corners(0.5), k, 4).diameter(), std::sqrt(3.0), 1e-15);
}

TEST(Subsample, DeterministicDistinctAndSeedDependent) {
  std::mt19937_64 rng(2);
  const auto v = t6d::testing::random_cloud(rng, 500);
  const auto a = subsample_points(v, 50, 9);
  const auto b = subsample_points(v, 50, 9);
  const auto c = subsample_points(v, 50, 10);
  EXPECT_EQ(a.points(), b.points());
  EXPECT_NE(a.points(), c.points());
  ASSERT_EQ(a.size(), 50u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NE(std::find(v.begin(), v.end(), a.points()[i]), v.end());
    for (std::size_t j = i + 1; j < a.size(); ++j) EXPECT_NE(a.points()[i], a.points()[j]);
  }
  EXPECT_THROW(subsample_points({}, 5, 0), EmptyMesh);
}

TEST(Subsample, RoughlyUniformSelection) {
  // each of 20 vertices picked with probability 5/20 over 4000 seeds
  std::vector<Vec3> v;
  for (int i = 0; i < 20; ++i) v.emplace_back(i, 0, 0);
  std::vector<int> hits(20, 0);
  for (std::uint64_t s = 0; s < 4000; ++s) {
    const auto picked = subsample_points(v, 5, s);
    for (const auto& p : picked.points()) ++hits[static_cast<int>(p.x())];
  }
  for (int h : hits) EXPECT_NEAR(h / 4000.0, 0.25, 0.03);
}

TEST(Transform, IdentityAndTranslation) {
  const ModelPoints mp(cube_corners(0.5), false);
  EXPECT_EQ(transform_points(mp, Pose::identity()), mp.points());
  const auto moved = transform_points(mp, {Rotation::identity(), Vec3(0, 0, 0.5)});
  for (std::size_t i = 0; i < mp.size(); ++i) EXPECT_EQ(moved[i], mp.points()[i] + Vec3(0, 0, 0.5));
}

TEST(Transform, CompositionMatchesSequentialApplication) {
  std::mt19937_64 rng(8);
  const ModelPoints mp(t6d::testing::random_cloud(rng, 30), false);
  for (int k = 0; k < 50; ++k) {
    const Pose p1{random_rotation(rng), t6d::testing::random_vec(rng, -1, 1)};
    const Pose p2{random_rotation(rng), t6d::testing::random_vec(rng, -1, 1)};
    const auto seq = transform_points(ModelPoints(transform_points(mp, p1), false), p2);
    const auto once = transform_points(mp, compose(p2, p1));
    for (std::size_t i = 0; i < seq.size(); ++i) EXPECT_LT((seq[i] - once[i]).norm(), 1e-12);
  }
}

TEST(Ply, ReadsVerticesAndIgnoresFaces) {
  std::istringstream in(
      "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 3\nproperty float x\nproperty float y\n"
      "property float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
      "1 2 3 255\n4 5 6 0\n-7 8.5 9e-1 10\n3 0 1 2\n");
  const auto v = read_ply_ascii(in);
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v[0], Vec3(1, 2, 3));
  EXPECT_EQ(v[2], Vec3(-7, 8.5, 0.9));
}

TEST(Ply, MillimetersAreConvertedToMeters) {
  std::istringstream in("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\n"
                        "end_header\n1000 -20 5\n");
  const auto v = read_ply_ascii(in, MeshUnits::millimeters);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NEAR((v[0] - Vec3(1.0, -0.02, 0.005)).norm(), 0.0, 1e-15);
  EXPECT_EQ(parse_mesh_units("mm"), MeshUnits::millimeters);
  EXPECT_EQ(parse_mesh_units("m"), MeshUnits::meters);
  EXPECT_THROW(parse_mesh_units("inch"), ConfigError);
}

TEST(Ply, RejectsBinaryAndTruncatedFiles) {
  std::istringstream bin("ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n");
  EXPECT_THROW(read_ply_ascii(bin), ParseError);
  std::istringstream shortfile(
      "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n");
  EXPECT_THROW(read_ply_ascii(shortfile), ParseError);
  std::istringstream nox("ply\nformat ascii 1.0\nelement vertex 1\nproperty float y\nend_header\n1\n");
  EXPECT_THROW(read_ply_ascii(nox), ParseError);
}
