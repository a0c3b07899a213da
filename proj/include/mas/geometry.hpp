#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "mas/error.hpp"
#include "mas/motion.hpp"

namespace mas {

/// Pinhole camera v = (R, tau, f). A world point p maps to camera coordinates
/// c = R p + tau; the image plane sits at depth f and is measured in meters.
class CameraView {
 public:
  CameraView(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation, double focal)
      : rotation_(rotation), translation_(translation), focal_(focal) {
    require(rotation.allFinite() && translation.allFinite() && std::isfinite(focal),
            ErrorKind::InvalidCamera, "camera parameters must be finite");
    require(focal > 0.0, ErrorKind::InvalidCamera, "focal length must be positive");
    const Eigen::Matrix3d gram = rotation * rotation.transpose();
    require((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-9,
            ErrorKind::InvalidCamera, "rotation is not orthonormal");
    require(rotation.determinant() > 0.0, ErrorKind::InvalidCamera,
            "rotation must have determinant +1");
  }

  const Eigen::Matrix3d& rotation() const noexcept { return rotation_; }
  const Eigen::Vector3d& translation() const noexcept { return translation_; }
  double focal() const noexcept { return focal_; }

  /// Camera center in world coordinates.
  Eigen::Vector3d center() const { return -rotation_.transpose() * translation_; }
  double distance() const { return center().norm(); }

  Eigen::Vector3d to_camera(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }

 private:
  Eigen::Matrix3d rotation_;
  Eigen::Vector3d translation_;
  double focal_;
};

inline Eigen::Vector2d project_point(const CameraView& v, const Eigen::Vector3d& p) {
  const Eigen::Vector3d c = v.to_camera(p);
  if (!(c.z() > 0.0))
    fail(ErrorKind::NonPositiveDepth, "point at or behind the camera plane (depth " +
                                          std::to_string(c.z()) + ")");
  return v.focal() * c.head<2>() / c.z();
}

/// d(uv)/dp of the perspective projection at world point p.
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const CameraView& v,
                                                       const Eigen::Vector3d& p) {
  const Eigen::Vector3d c = v.to_camera(p);
  const Eigen::Matrix3d& R = v.rotation();
  const double inv_z = 1.0 / c.z();
  Eigen::Matrix<double, 2, 3> jac;
  jac.row(0) = v.focal() * inv_z * (R.row(0) - c.x() * inv_z * R.row(2));
  jac.row(1) = v.focal() * inv_z * (R.row(1) - c.y() * inv_z * R.row(2));
  return jac;
}

inline Motion2D perspective_project(const Motion3D& X, const CameraView& v) {
  Motion2D out(X.frames(), X.joints());
  const Eigen::Matrix3Xd cam = (v.rotation() * X.points()).colwise() + v.translation();
  const double min_depth = cam.row(2).minCoeff();
  if (!(min_depth > 0.0))
    fail(ErrorKind::NonPositiveDepth,
         "motion reaches depth " + std::to_string(min_depth) + " in camera frame");
  out.points() = (v.focal() * (cam.topRows<2>().array().rowwise() / cam.row(2).array())).matrix();
  return out;
}

/// Orthographic projection R_xy p. Translation and focal length are ignored.
inline Motion2D orthographic_project(const Motion3D& X, const CameraView& v) {
  Motion2D out(X.frames(), X.joints());
  out.points().noalias() = v.rotation().topRows<2>() * X.points();
  return out;
}

/// Projects one 3D noise draw into every view. Each view's marginal stays
/// standard normal because R_xy has orthonormal rows.
inline std::vector<Motion2D> project_noise(const Motion3D& eps3d,
                                           const std::vector<CameraView>& views) {
  std::vector<Motion2D> out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back(orthographic_project(eps3d, v));
  return out;
}

/// Camera at `distance` from the origin looking at it. Rows of the rotation are
/// (right, up, forward) so camera-frame z is depth and image v points up.
inline CameraView look_at_camera(double azimuth, double elevation, double distance, double focal) {
  const double ce = std::cos(elevation);
  if (std::abs(ce) < 1e-9) fail(ErrorKind::BadRing, "elevation of +-pi/2 has no defined up axis");
  const Eigen::Vector3d position(distance * ce * std::cos(azimuth),
                                 distance * ce * std::sin(azimuth),
                                 distance * std::sin(elevation));
  const Eigen::Vector3d forward = -position.normalized();
  const Eigen::Vector3d world_up = Eigen::Vector3d::UnitZ();
  const Eigen::Vector3d up = (world_up - world_up.dot(forward) * forward).normalized();
  const Eigen::Vector3d right = up.cross(forward);
  Eigen::Matrix3d R;
  R.row(0) = right.transpose();
  R.row(1) = up.transpose();
  R.row(2) = forward.transpose();
  return CameraView(R, -R * position, focal);
}

enum class RingLayout {
  Even,
  /// Two views 120 degrees apart; only meaningful for V = 2.
  TwoViews120,
};

inline std::vector<double> ring_azimuths(int views, RingLayout layout = RingLayout::Even) {
  std::vector<double> az(static_cast<std::size_t>(std::max(views, 0)));
  const double step = (layout == RingLayout::TwoViews120 && views == 2)
                          ? 2.0 * std::numbers::pi / 3.0
                          : 2.0 * std::numbers::pi / views;
  for (int k = 0; k < views; ++k) az[static_cast<std::size_t>(k)] = k * step;
  return az;
}

inline std::vector<CameraView> make_camera_ring(int views, double elevation, double distance,
                                                double focal, RingLayout layout = RingLayout::Even) {
  require(views >= 2, ErrorKind::BadRing, "a camera ring needs at least two views");
  require(distance > 1.0, ErrorKind::BadRing,
          "camera distance must exceed the unit bounding sphere radius");
  require(focal > 0.0, ErrorKind::BadRing, "focal length must be positive");
  std::vector<CameraView> ring;
  ring.reserve(static_cast<std::size_t>(views));
  for (double az : ring_azimuths(views, layout))
    ring.push_back(look_at_camera(az, elevation, distance, focal));
  return ring;
}

/// Max-norm difference between orthographic and perspective projections of X.
/// Requires the subject inside the unit ball and a camera at distance d on its
/// optical axis with focal length d, so both projections agree at the origin.
inline double orthographic_perspective_gap(const Motion3D& X, const CameraView& v) {
  const double d = v.translation().z();
  require(v.translation().head<2>().cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, d),
          ErrorKind::ConventionViolation, "camera must look at the origin");
  require(d > 1.0, ErrorKind::ConventionViolation, "camera distance must exceed 1");
  require(std::abs(v.focal() - d) <= 1e-12 * d, ErrorKind::ConventionViolation,
          "focal length must equal camera distance");
  const double max_radius = X.points().colwise().norm().maxCoeff();
  require(max_radius <= 1.0, ErrorKind::ConventionViolation,
          "motion leaves the unit bounding sphere (radius " + std::to_string(max_radius) + ")");
  const Motion2D orth = orthographic_project(X, v);
  const Motion2D pers = perspective_project(X, v);
  return (orth.points() - pers.points()).cwiseAbs().maxCoeff();
}

}  // namespace mas
