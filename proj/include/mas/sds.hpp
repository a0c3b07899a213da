#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "mas/denoiser.hpp"
#include "mas/diffusion.hpp"
#include "mas/geometry.hpp"
#include "mas/rng.hpp"

namespace mas {

/// Score-distillation baseline: optimize one 3D motion by repeatedly noising a
/// random view of it and stepping toward the denoiser's clean prediction.
struct SdsConfig {
  int iterations = 200;
  double step_size = 0.05;
  double elevation = 0.2;
  double camera_distance = 7.0;
  double focal = 7.0;
  /// Standard deviation of the random initial motion, in meters.
  double init_scale = 0.3;
  int steps = 100;
  std::uint64_t seed = 0;
  /// Positive values clamp the clean estimate (normalized units); 0 disables.
  double x0_clip = 0.0;

  void validate() const {
    require(x0_clip >= 0.0, ErrorKind::InvalidArgument, "x0 clip bound must be >= 0");
    require(iterations >= 1, ErrorKind::InvalidArgument, "SDS needs at least one iteration");
    require(step_size > 0.0 && std::isfinite(step_size), ErrorKind::InvalidArgument,
            "SDS step size must be positive");
    require(camera_distance > 1.0, ErrorKind::InvalidArgument, "camera distance must exceed 1");
    require(focal > 0.0, ErrorKind::InvalidArgument, "focal length must be positive");
    require(init_scale > 0.0, ErrorKind::InvalidArgument, "init scale must be positive");
    require(steps >= 2, ErrorKind::InvalidArgument, "need at least two diffusion steps");
  }
};

/// Gradient of 1/2 || n(P(X, view)) - target ||^2 with respect to X, where n is
/// the denoiser's normalization and target is in normalized coordinates.
inline Motion3D reprojection_gradient(const Motion3D& X, const CameraView& view,
                                      const Motion2D& target, const Normalizer& norm) {
  const Motion2D resid = norm.normalize(perspective_project(X, view)) - target;
  Motion3D grad(X.frames(), X.joints());
  for (Eigen::Index n = 0; n < X.size(); ++n)
    grad.points().col(n) =
        projection_jacobian(view, X.points().col(n)).transpose() * resid.points().col(n) / norm.scale;
  return grad;
}

/// One SDS gradient: x_t is forward-noised from the current projection with
/// `eps`, and the denoiser's clean estimate is held constant.
template <NoisePredictor Predictor>
Motion3D sds_gradient(const Motion3D& X, const CameraView& view, int t, const Motion2D& eps,
                      const Predictor& predictor, const NoiseSchedule& sched,
                      const Normalizer& norm, double x0_clip = 0.0) {
  const Motion2D x0 = norm.normalize(perspective_project(X, view));
  const Motion2D x_t = forward_sample(x0, t, eps, sched);
  const Motion2D eps_hat = predictor(x_t, t, 0);
  Motion2D x0_hat = predict_x0(x_t, t, eps_hat, sched);
  clip_x0(x0_hat, x0_clip);
  return reprojection_gradient(X, view, x0_hat, norm);
}

template <NoisePredictor Predictor>
Motion3D sds_generate(const Predictor& predictor, const Normalizer& norm, int joints, int frames,
                      const SdsConfig& cfg) {
  cfg.validate();
  const NoiseSchedule sched = NoiseSchedule::cosine(cfg.steps);
  Rng rng = make_rng(cfg.seed);
  Motion3D X = normal_motion<3>(frames, joints, rng);
  X *= cfg.init_scale;
  for (int i = 0; i < cfg.iterations; ++i) {
    const double azimuth = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const CameraView view = look_at_camera(azimuth, cfg.elevation, cfg.camera_distance, cfg.focal);
    const int t = uniform_int(rng, 1, sched.steps());
    const Motion2D eps = normal_motion<2>(frames, joints, rng);
    X -= cfg.step_size * sds_gradient(X, view, t, eps, predictor, sched, norm, cfg.x0_clip);
    if (!X.all_finite())
      fail(ErrorKind::NonFiniteState, "SDS iterate became non-finite at iteration " + std::to_string(i));
  }
  return X;
}

inline Motion3D sds_generate(const Denoiser& d, int frames, const SdsConfig& cfg) {
  const NoiseSchedule sched = NoiseSchedule::cosine(cfg.steps);
  require(d.diffusion_steps() == cfg.steps && d.schedule_fingerprint() == sched.fingerprint(),
          ErrorKind::VersionMismatch, "denoiser schedule does not match SDS steps");
  return sds_generate(d, d.normalizer, d.joints(), frames, cfg);
}

}  // namespace mas
