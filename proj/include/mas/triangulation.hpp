#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "mas/error.hpp"
#include "mas/geometry.hpp"
#include "mas/motion.hpp"

namespace mas {

struct TriangulationConfig {
  int max_iterations = 50;
  /// Stop once the per-point objective gradient norm falls below this.
  double convergence_tol = 1e-9;
  /// Initial Levenberg damping, relative to the mean diagonal of J^T J.
  double damping = 1e-3;
  /// Points must stay this far in front of every camera.
  double min_depth = 1e-3;

  void validate() const {
    require(max_iterations >= 1, ErrorKind::InvalidArgument, "max_iterations must be >= 1");
    require(convergence_tol >= 0.0, ErrorKind::InvalidArgument, "convergence_tol must be >= 0");
    require(damping > 0.0, ErrorKind::InvalidArgument, "damping must be positive");
    require(min_depth > 0.0, ErrorKind::InvalidArgument, "min_depth must be positive");
  }
};

struct TriangulationResult {
  Motion3D X;
  /// Sum over views of squared reprojection error.
  double objective = 0.0;
  int max_iterations = 0;
  double mean_iterations = 0.0;
  /// Points whose normal equations were rank deficient; they keep their start value.
  int degenerate_points = 0;
};

namespace detail {

struct PointProblem {
  const std::vector<CameraView>* views;
  std::vector<Eigen::Vector2d> targets;
  double min_depth;

  bool feasible(const Eigen::Vector3d& p) const {
    for (const auto& v : *views)
      if (!(v.to_camera(p).z() > min_depth)) return false;
    return true;
  }

  double cost(const Eigen::Vector3d& p) const {
    double c = 0.0;
    for (std::size_t i = 0; i < views->size(); ++i) {
      const Eigen::Vector3d cam = (*views)[i].to_camera(p);
      const Eigen::Vector2d uv = (*views)[i].focal() * cam.head<2>() / cam.z();
      c += (uv - targets[i]).squaredNorm();
    }
    return c;
  }

  // Normal equations of the Gauss-Newton model: A = J^T J, g = J^T r.
  void linearize(const Eigen::Vector3d& p, Eigen::Matrix3d& A, Eigen::Vector3d& g) const {
    A.setZero();
    g.setZero();
    for (std::size_t i = 0; i < views->size(); ++i) {
      const CameraView& v = (*views)[i];
      const Eigen::Vector3d cam = v.to_camera(p);
      const Eigen::Vector2d r = v.focal() * cam.head<2>() / cam.z() - targets[i];
      const Eigen::Matrix<double, 2, 3> J = projection_jacobian(v, p);
      A.noalias() += J.transpose() * J;
      g.noalias() += J.transpose() * r;
    }
  }

  // Linear (algebraic) triangulation: u (R2 p + t_z) = f (R0 p + t_x), same for v.
  std::optional<Eigen::Vector3d> linear_solution() const {
    Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
    Eigen::Vector3d b = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < views->size(); ++i) {
      const CameraView& v = (*views)[i];
      const Eigen::Matrix3d& R = v.rotation();
      const Eigen::Vector3d& t = v.translation();
      for (int axis = 0; axis < 2; ++axis) {
        const Eigen::RowVector3d row = targets[i](axis) * R.row(2) - v.focal() * R.row(axis);
        const double rhs = v.focal() * t(axis) - targets[i](axis) * t(2);
        A.noalias() += row.transpose() * row;
        b += row.transpose() * rhs;
      }
    }
    const Eigen::LDLT<Eigen::Matrix3d> ldlt(A);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return std::nullopt;
    Eigen::Vector3d p = ldlt.solve(b);
    if (!p.allFinite()) return std::nullopt;
    return p;
  }
};

}  // namespace detail

/// Least-squares 3D motion whose perspective projections best match `targets`
/// in every view. Each joint-frame is an independent three-unknown problem
/// solved by Levenberg-damped Gauss-Newton with step rejection, so the
/// objective never increases. Without `init`, points start from linear
/// triangulation.
inline TriangulationResult triangulate(const std::vector<Motion2D>& targets,
                                       const std::vector<CameraView>& views,
                                       const Motion3D* init, const TriangulationConfig& cfg) {
  cfg.validate();
  if (views.size() < 2)
    fail(ErrorKind::DegenerateGeometry, "triangulation needs at least two views (depth unobservable)");
  require(targets.size() == views.size(), ErrorKind::ShapeMismatch, "one target per view required");
  for (const auto& t : targets) {
    targets.front().check_shape(t);
    if (!t.all_finite()) fail(ErrorKind::DivergedTriangulation, "non-finite triangulation target");
  }
  const int frames = targets.front().frames(), joints = targets.front().joints();
  if (init) {
    require(init->frames() == frames && init->joints() == joints, ErrorKind::ShapeMismatch,
            "initial motion shape differs from targets");
    require(init->all_finite(), ErrorKind::DivergedTriangulation, "non-finite initial motion");
  }

  TriangulationResult out{Motion3D(frames, joints)};
  detail::PointProblem prob{&views, std::vector<Eigen::Vector2d>(views.size()), cfg.min_depth};
  long total_iterations = 0;

  for (Eigen::Index n = 0; n < out.X.size(); ++n) {
    for (std::size_t v = 0; v < views.size(); ++v) prob.targets[v] = targets[v].points().col(n);

    Eigen::Matrix3d A;
    Eigen::Vector3d g;
    auto well_posed = [&](const Eigen::Vector3d& q) {
      prob.linearize(q, A, g);
      const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(A, Eigen::EigenvaluesOnly);
      const Eigen::Vector3d ev = eig.eigenvalues();
      return ev(2) > 0.0 && ev(0) >= 1e-12 * ev(2);
    };

    // Start from the warm start, else linear triangulation, else the origin;
    // a start where the normal equations are rank deficient is passed over.
    std::vector<Eigen::Vector3d> starts;
    if (init) starts.push_back(init->points().col(n));
    if (auto lin = prob.linear_solution()) starts.push_back(*lin);
    starts.push_back(Eigen::Vector3d::Zero());
    std::optional<Eigen::Vector3d> first_feasible;
    Eigen::Vector3d p = Eigen::Vector3d::Zero();
    bool posed = false;
    for (const auto& q : starts) {
      if (!prob.feasible(q)) continue;
      if (!first_feasible) first_feasible = q;
      if (well_posed(q)) {
        p = q;
        posed = true;
        break;
      }
    }
    if (!first_feasible)
      fail(ErrorKind::DegenerateGeometry, "no feasible starting point in front of all cameras");
    if (!posed) p = *first_feasible;

    double cost = prob.cost(p);
    double lambda = cfg.damping;
    int it = 0;
    for (; it < cfg.max_iterations; ++it) {
      if (!well_posed(p)) {
        ++out.degenerate_points;
        break;
      }
      if (2.0 * g.norm() <= cfg.convergence_tol) break;
      const double scale = A.trace() / 3.0;
      bool accepted = false;
      while (lambda < 1e12) {
        const Eigen::Vector3d step =
            (A + lambda * scale * Eigen::Matrix3d::Identity()).ldlt().solve(-g);
        const Eigen::Vector3d q = p + step;
        if (prob.feasible(q)) {
          const double c = prob.cost(q);
          if (c < cost) {
            p = q;
            cost = c;
            lambda = std::max(lambda * 0.1, 1e-12);
            accepted = true;
            break;
          }
          if (c == cost && step.norm() <= 1e-15 * (1.0 + p.norm())) break;
        }
        lambda *= 10.0;
      }
      if (!accepted) break;
    }
    if (!std::isfinite(cost)) fail(ErrorKind::DivergedTriangulation, "reprojection objective is not finite");
    out.X.points().col(n) = p;
    out.objective += cost;
    out.max_iterations = std::max(out.max_iterations, it);
    total_iterations += it;
  }
  out.mean_iterations = static_cast<double>(total_iterations) / static_cast<double>(out.X.size());
  return out;
}

/// Sum over views of squared reprojection error of X.
inline double reprojection_objective(const Motion3D& X, const std::vector<Motion2D>& targets,
                                     const std::vector<CameraView>& views) {
  double total = 0.0;
  for (std::size_t v = 0; v < views.size(); ++v)
    total += (perspective_project(X, views[v]).points() - targets[v].points()).squaredNorm();
  return total;
}

}  // namespace mas
