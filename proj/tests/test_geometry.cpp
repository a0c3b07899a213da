#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

#include "mas/geometry.hpp"
#include "mas/rng.hpp"
#include "test_support.hpp"

using namespace mas;

namespace {

CameraView axis_camera(double d, double f) {
  return CameraView(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, 0, d), f);
}

Motion3D single_point(double x, double y, double z) {
  Motion3D m(1, 1);
  m(0, 0) = Eigen::Vector3d(x, y, z);
  return m;
}

}  // namespace

TEST(Projection, OpticalAxisPointMapsToOrigin) {
  const Motion2D uv = perspective_project(single_point(0, 0, 0), axis_camera(7, 7));
  EXPECT_DOUBLE_EQ(uv(0, 0)(0), 0.0);
  EXPECT_DOUBLE_EQ(uv(0, 0)(1), 0.0);
}

TEST(Projection, PinholeFormulaUnitOffset) {
  const Motion2D uv = perspective_project(single_point(1, 0, 0), axis_camera(7, 7));
  EXPECT_DOUBLE_EQ(uv(0, 0)(0), 1.0);
  EXPECT_DOUBLE_EQ(uv(0, 0)(1), 0.0);
}

TEST(Projection, MatchesScalarLoopOracle) {
  Rng rng = make_rng(11);
  Motion3D X = normal_motion<3>(9, 7, rng);
  X *= 0.4;
  for (int c = 0; c < 3; ++c) {
    const CameraView v = testing_support::random_camera(rng, 5.0 + c);
    const Motion2D uv = perspective_project(X, v);
    for (int l = 0; l < X.frames(); ++l) {
      for (int j = 0; j < X.joints(); ++j) {
        double cam[3];
        for (int r = 0; r < 3; ++r) {
          cam[r] = v.translation()(r);
          for (int k = 0; k < 3; ++k) cam[r] += v.rotation()(r, k) * X(l, j)(k);
        }
        EXPECT_NEAR(uv(l, j)(0), v.focal() * cam[0] / cam[2], 1e-12);
        EXPECT_NEAR(uv(l, j)(1), v.focal() * cam[1] / cam[2], 1e-12);
      }
    }
  }
}

TEST(Projection, BehindCameraIsRejected) {
  EXPECT_MAS_ERROR(perspective_project(single_point(0, 0, -7), axis_camera(7, 7)), ErrorKind::NonPositiveDepth);
  EXPECT_MAS_ERROR(perspective_project(single_point(0, 0, -9), axis_camera(7, 7)), ErrorKind::NonPositiveDepth);
}

TEST(Projection, JacobianMatchesCentralDifferences) {
  Rng rng = make_rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const CameraView v = testing_support::random_camera(rng, 6.0);
    Eigen::Vector3d p;
    fill_normal(p, rng);
    p *= 0.5;
    const Eigen::Matrix<double, 2, 3> J = projection_jacobian(v, p);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      Eigen::Vector3d dp = Eigen::Vector3d::Zero();
      dp(k) = h;
      const Eigen::Vector2d fd = (project_point(v, p + dp) - project_point(v, p - dp)) / (2 * h);
      EXPECT_LE((J.col(k) - fd).norm(), 1e-6 * std::max(1.0, fd.norm()));
    }
  }
}

TEST(Orthographic, IdentityDropsDepth) {
  const Motion2D uv = orthographic_project(single_point(3, 4, 5), axis_camera(7, 7));
  EXPECT_DOUBLE_EQ(uv(0, 0)(0), 3.0);
  EXPECT_DOUBLE_EQ(uv(0, 0)(1), 4.0);
}

TEST(Orthographic, HalfTurnAboutZNegatesPlane) {
  const Eigen::Matrix3d Rz = Eigen::AngleAxisd(std::numbers::pi, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const CameraView v(Rz, Eigen::Vector3d(0, 0, 7), 7);
  const Motion2D uv = orthographic_project(single_point(0.3, -0.8, 0.5), v);
  EXPECT_NEAR(uv(0, 0)(0), -0.3, 1e-15);
  EXPECT_NEAR(uv(0, 0)(1), 0.8, 1e-15);
}

TEST(Orthographic, MatchesMatrixVectorLoop) {
  Rng rng = make_rng(13);
  const Motion3D X = normal_motion<3>(5, 4, rng);
  const CameraView v = testing_support::random_camera(rng, 4.0);
  const Motion2D uv = orthographic_project(X, v);
  for (Eigen::Index n = 0; n < X.size(); ++n)
    for (int r = 0; r < 2; ++r) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += v.rotation()(r, k) * X.points()(k, n);
      EXPECT_NEAR(uv.points()(r, n), acc, 1e-12);
    }
}

TEST(Orthographic, Linear) {
  Rng rng = make_rng(14);
  const Motion3D X = normal_motion<3>(6, 3, rng), Y = normal_motion<3>(6, 3, rng);
  const CameraView v = testing_support::random_camera(rng, 4.0);
  const Motion2D lhs = orthographic_project(2.5 * X + (-1.25) * Y, v);
  const Motion2D rhs = 2.5 * orthographic_project(X, v) + (-1.25) * orthographic_project(Y, v);
  EXPECT_LE((lhs.points() - rhs.points()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(NoiseProjection, ZeroNoiseStaysZero) {
  const auto ring = make_camera_ring(5, 0.2, 7, 7);
  for (const auto& e : project_noise(Motion3D(4, 3), ring)) EXPECT_EQ(e.points().cwiseAbs().maxCoeff(), 0.0);
}

TEST(NoiseProjection, StandardNormalMarginal) {
  Rng rng = make_rng(15);
  const int N = 100000;
  const Motion3D eps = normal_motion<3>(N, 1, rng);
  const CameraView v = look_at_camera(1.1, 0.4, 7, 7);
  const Motion2D e = orthographic_project(eps, v);
  const Eigen::Vector2d mu = e.points().rowwise().mean();
  const Eigen::Matrix2d cov = (e.points().colwise() - mu) * (e.points().colwise() - mu).transpose() / (N - 1);
  EXPECT_LT(mu.cwiseAbs().maxCoeff(), 0.02);
  EXPECT_LT((cov - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(), 0.02);
}

TEST(NoiseProjection, AntipodalViewsNegateHorizontal) {
  Rng rng = make_rng(16);
  const Motion3D eps = normal_motion<3>(8, 5, rng);
  const double theta = 0.7;
  const auto e = project_noise(eps, {look_at_camera(theta, 0.0, 7, 7), look_at_camera(theta + std::numbers::pi, 0.0, 7, 7)});
  EXPECT_LE((e[0].points().row(0) + e[1].points().row(0)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((e[0].points().row(1) - e[1].points().row(1)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CameraRing, FiveViewsEvenlySpread) {
  const auto ring = make_camera_ring(5, 0.0, 7, 7);
  ASSERT_EQ(ring.size(), 5u);
  for (int k = 0; k < 5; ++k) {
    const Eigen::Vector3d c = ring[static_cast<std::size_t>(k)].center();
    const double az = std::atan2(c.y(), c.x());
    const double expect = k * 2 * std::numbers::pi / 5;
    EXPECT_NEAR(std::remainder(az - expect, 2 * std::numbers::pi), 0.0, 1e-12);
    EXPECT_NEAR(c.norm(), 7.0, 1e-12);
    EXPECT_NEAR(c.z(), 0.0, 1e-12);
  }
}

TEST(CameraRing, TwoViewsDefaultOpposite) {
  const auto az = ring_azimuths(2);
  EXPECT_DOUBLE_EQ(az[0], 0.0);
  EXPECT_DOUBLE_EQ(az[1], std::numbers::pi);
  EXPECT_NEAR(ring_azimuths(2, RingLayout::TwoViews120)[1], 2 * std::numbers::pi / 3, 1e-15);
}

TEST(CameraRing, EveryCameraLooksAtOrigin) {
  for (int V : {2, 3, 5, 9}) {
    for (const auto& v : make_camera_ring(V, 0.3, 4, 2)) {
      const Motion2D uv = perspective_project(Motion3D(1, 1), v);
      EXPECT_NEAR(uv.points().cwiseAbs().maxCoeff(), 0.0, 1e-12);
      EXPECT_NEAR((v.rotation() * v.rotation().transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 0.0, 1e-12);
      EXPECT_NEAR(v.rotation().determinant(), 1.0, 1e-12);
      EXPECT_NEAR(v.distance(), 4.0, 1e-12);
    }
  }
}

TEST(CameraRing, ImageUpFollowsWorldUp) {
  const CameraView v = look_at_camera(0.4, 0.2, 7, 7);
  const Eigen::Vector2d top = project_point(v, Eigen::Vector3d(0, 0, 0.5));
  EXPECT_GT(top.y(), 0.0);
  EXPECT_NEAR(top.x(), 0.0, 1e-12);
}

TEST(CameraRing, RejectsBadInput) {
  EXPECT_MAS_ERROR(make_camera_ring(1, 0.2, 7, 7), ErrorKind::BadRing);
  EXPECT_MAS_ERROR(make_camera_ring(5, 0.2, 1.0, 7), ErrorKind::BadRing);
  EXPECT_MAS_ERROR(make_camera_ring(5, std::numbers::pi / 2, 7, 7), ErrorKind::BadRing);
}

TEST(CameraView, RejectsInvalidRotationAndFocal) {
  Eigen::Matrix3d skew = Eigen::Matrix3d::Identity();
  skew(0, 1) = 0.1;
  EXPECT_MAS_ERROR(CameraView(skew, Eigen::Vector3d(0, 0, 7), 7), ErrorKind::InvalidCamera);
  EXPECT_MAS_ERROR(CameraView(-Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, 0, 7), 7), ErrorKind::InvalidCamera);
  EXPECT_MAS_ERROR(CameraView(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, 0, 7), 0.0), ErrorKind::InvalidCamera);
}

TEST(ProjectionGap, ZeroMotionHasZeroGap) {
  for (double d : {2.0, 7.0}) EXPECT_EQ(orthographic_perspective_gap(Motion3D(3, 4), axis_camera(d, d)), 0.0);
}

TEST(ProjectionGap, AxisAlignedCases) {
  EXPECT_NEAR(orthographic_perspective_gap(single_point(1, 0, 0), axis_camera(7, 7)), 0.0, 1e-15);
  EXPECT_NEAR(orthographic_perspective_gap(single_point(0, 0, 1), axis_camera(7, 7)), 0.0, 1e-15);
  // Off-axis and off the image plane: |x - d x / (d + z)| = 0.6 * 0.8 / 7.8.
  EXPECT_NEAR(orthographic_perspective_gap(single_point(0.6, 0, 0.8), axis_camera(7, 7)), 0.6 * 0.8 / 7.8, 1e-15);
}

TEST(ProjectionGap, BoundHoldsOnRandomBallPoints) {
  Rng rng = make_rng(17);
  for (double d : {3.0, 5.0, 7.0, 11.0}) {
    const auto ring = make_camera_ring(4, 0.0, d, d);
    for (int i = 0; i < 500; ++i) {
      const Motion3D X = testing_support::random_ball_motion(rng, 4, 4);
      for (const auto& v : ring) EXPECT_LE(orthographic_perspective_gap(X, v), 1.0 / (d - 1.0));
    }
  }
}

TEST(ProjectionGap, ConventionViolations) {
  // Corner of the unit cube lies outside the unit ball; the bound fails there.
  EXPECT_MAS_ERROR(orthographic_perspective_gap(single_point(1, 1, 1), axis_camera(3, 3)), ErrorKind::ConventionViolation);
  EXPECT_MAS_ERROR(orthographic_perspective_gap(single_point(0.1, 0, 0), axis_camera(7, 5)), ErrorKind::ConventionViolation);
  EXPECT_MAS_ERROR(orthographic_perspective_gap(single_point(0.1, 0, 0), axis_camera(1, 1)), ErrorKind::ConventionViolation);
  EXPECT_MAS_ERROR(orthographic_perspective_gap(single_point(0.1, 0, 0),
                                                CameraView(Eigen::Matrix3d::Identity(), Eigen::Vector3d(1, 0, 7), 7)),
                   ErrorKind::ConventionViolation);
}
