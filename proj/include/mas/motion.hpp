#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>

#include "mas/error.hpp"

namespace mas {

/// A motion of `frames` poses over `joints` joints. Points are stored
/// frame-major: column `frame * joints + joint` holds one joint position, so a
/// single frame is a contiguous block of `Dim * joints` scalars.
template <int Dim>
class Motion {
 public:
  using Points = Eigen::Matrix<double, Dim, Eigen::Dynamic>;
  using Point = Eigen::Matrix<double, Dim, 1>;
  static constexpr int dim = Dim;

  Motion() = default;

  Motion(int frames, int joints) : frames_(frames), joints_(joints) {
    require(frames >= 1 && joints >= 1, ErrorKind::ShapeMismatch,
            "motion needs at least one frame and one joint");
    points_ = Points::Zero(Dim, static_cast<Eigen::Index>(frames) * joints);
  }

  Motion(int frames, int joints, Points points)
      : frames_(frames), joints_(joints), points_(std::move(points)) {
    require(frames >= 1 && joints >= 1, ErrorKind::ShapeMismatch,
            "motion needs at least one frame and one joint");
    require(points_.cols() == static_cast<Eigen::Index>(frames) * joints,
            ErrorKind::ShapeMismatch, "point count does not match frames x joints");
  }

  static Motion zeros(int frames, int joints) { return Motion(frames, joints); }

  int frames() const noexcept { return frames_; }
  int joints() const noexcept { return joints_; }
  Eigen::Index size() const noexcept { return points_.cols(); }
  bool empty() const noexcept { return frames_ == 0; }

  Points& points() noexcept { return points_; }
  const Points& points() const noexcept { return points_; }

  Eigen::Index index(int frame, int joint) const noexcept {
    return static_cast<Eigen::Index>(frame) * joints_ + joint;
  }

  auto operator()(int frame, int joint) { return points_.col(index(frame, joint)); }
  auto operator()(int frame, int joint) const { return points_.col(index(frame, joint)); }

  /// Frame-major view as a (Dim*joints) x frames matrix, one column per frame.
  Eigen::Map<Eigen::MatrixXd> frame_matrix() {
    return {points_.data(), static_cast<Eigen::Index>(Dim) * joints_, frames_};
  }
  Eigen::Map<const Eigen::MatrixXd> frame_matrix() const {
    return {points_.data(), static_cast<Eigen::Index>(Dim) * joints_, frames_};
  }

  bool same_shape(const Motion& other) const noexcept {
    return frames_ == other.frames_ && joints_ == other.joints_;
  }

  bool all_finite() const { return points_.allFinite(); }

  Motion& operator+=(const Motion& rhs) {
    check_shape(rhs);
    points_ += rhs.points_;
    return *this;
  }
  Motion& operator-=(const Motion& rhs) {
    check_shape(rhs);
    points_ -= rhs.points_;
    return *this;
  }
  Motion& operator*=(double s) {
    points_ *= s;
    return *this;
  }

  friend Motion operator+(Motion a, const Motion& b) { return a += b; }
  friend Motion operator-(Motion a, const Motion& b) { return a -= b; }
  friend Motion operator*(double s, Motion a) { return a *= s; }
  friend Motion operator*(Motion a, double s) { return a *= s; }

  void check_shape(const Motion& other) const {
    require(same_shape(other), ErrorKind::ShapeMismatch,
            "motion shapes differ: " + std::to_string(frames_) + "x" +
                std::to_string(joints_) + " vs " + std::to_string(other.frames_) + "x" +
                std::to_string(other.joints_));
  }

 private:
  int frames_ = 0;
  int joints_ = 0;
  Points points_;
};

using Motion2D = Motion<2>;
using Motion3D = Motion<3>;

template <int Dim>
double rms(const Motion<Dim>& m) {
  if (m.size() == 0) return 0.0;
  return std::sqrt(m.points().squaredNorm() / static_cast<double>(m.size()));
}

/// Root-mean-square point distance between two motions of equal shape.
template <int Dim>
double rms_distance(const Motion<Dim>& a, const Motion<Dim>& b) {
  a.check_shape(b);
  if (a.size() == 0) return 0.0;
  return std::sqrt((a.points() - b.points()).squaredNorm() / static_cast<double>(a.size()));
}

}  // namespace mas
