#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mas/denoiser.hpp"
#include "mas/diffusion.hpp"
#include "mas/error.hpp"
#include "mas/geometry.hpp"
#include "mas/motion.hpp"
#include "mas/rng.hpp"
#include "mas/triangulation.hpp"

namespace mas {

struct MasConfig {
  int views = 5;
  double elevation = 0.2;
  double camera_distance = 7.0;
  double focal = 7.0;
  RingLayout layout = RingLayout::Even;
  TriangulationConfig triangulation;
  int steps = 100;
  std::uint64_t seed = 0;
  /// false replaces the projected 3D noise with independent per-view draws.
  bool consistent_noise = true;
  /// Positive values clamp each x_hat_0 coordinate (normalized units) before
  /// triangulation; 0 disables.
  double x0_clip = 0.0;
  /// Keep every 3D noise draw and the per-view injected noise in the trace.
  bool retain_noise = false;

  void validate() const {
    require(views >= 2, ErrorKind::InvalidArgument, "MAS needs at least two views");
    require(camera_distance > 1.0, ErrorKind::InvalidArgument, "camera distance must exceed 1");
    require(focal > 0.0, ErrorKind::InvalidArgument, "focal length must be positive");
    require(steps >= 2, ErrorKind::InvalidArgument, "need at least two diffusion steps");
    require(x0_clip >= 0.0, ErrorKind::InvalidArgument, "x0 clip bound must be >= 0");
    triangulation.validate();
  }
};

struct MasStepRecord {
  /// Diffusion step this record belongs to; 0 marks the output triangulation.
  int t = 0;
  Motion3D X;
  /// RMS of x_hat_0^v - x_tilde_0^v per view, in normalized units.
  std::vector<double> residual_rms;
  int triangulation_iterations = 0;
  double triangulation_mean_iterations = 0.0;
  int degenerate_points = 0;
};

struct MasTrace {
  std::vector<CameraView> views;
  /// T step records followed by the output triangulation.
  std::vector<MasStepRecord> steps;
  /// With retain_noise: noise3d[0] initializes x_T, noise3d[i] is drawn at
  /// step T - i + 1. Empty when per-view noise is independent.
  std::vector<Motion3D> noise3d;
  /// With retain_noise: injected 2D noise per step (same indexing as steps).
  std::vector<std::vector<Motion2D>> view_noise;
  /// With retain_noise: x_t of every view entering each step.
  std::vector<std::vector<Motion2D>> view_states;
};

struct MasResult {
  Motion3D motion;
  MasTrace trace;
};

class MasFailure : public Error {
 public:
  MasFailure(ErrorKind kind, const std::string& msg, MasTrace trace)
      : Error(kind, msg), trace_(std::move(trace)) {}
  const MasTrace& trace() const noexcept { return trace_; }

 private:
  MasTrace trace_;
};

/// Swap the camera in ring slot `slot` for a new azimuth before step index
/// `step_index` (0 = before the first denoising step, i.e. at t = T).
struct ViewResample {
  int step_index = 0;
  int slot = 0;
  double azimuth = 0.0;
};

namespace detail {

inline std::vector<Motion2D> normalized_projections(const Motion3D& X,
                                                    const std::vector<CameraView>& views,
                                                    const Normalizer& norm) {
  std::vector<Motion2D> out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back(norm.normalize(perspective_project(X, v)));
  return out;
}

}  // namespace detail

/// Synthesizes x_t for a view that was not part of the live ring by replaying
/// the per-view recurrence against the stored 3D motions and 3D noise draws.
inline Motion2D replay_view(const MasTrace& trace, const CameraView& view, int t,
                            const NoiseSchedule& sched, const Normalizer& norm) {
  const int T = sched.steps();
  sched.check_step(t);
  const std::size_t needed = static_cast<std::size_t>(T - t);
  if (trace.noise3d.size() < needed + 1 || trace.steps.size() < needed)
    fail(ErrorKind::MissingTrace, "trace lacks the 3D motion / noise history for step " +
                                      std::to_string(t));
  Motion2D x = orthographic_project(trace.noise3d[0], view);
  for (int s = T; s > t; --s) {
    const std::size_t i = static_cast<std::size_t>(T - s);
    const Motion2D target = norm.normalize(perspective_project(trace.steps[i].X, view));
    x = posterior_step(x, target, s, orthographic_project(trace.noise3d[i + 1], view), sched);
  }
  return x;
}

/// Multi-view ancestral sampling with optional camera re-sampling. With an
/// empty schedule this is exactly mas_sample().
template <NoisePredictor Predictor>
MasResult mas_sample_dynamic_views(const Predictor& predictor, const Normalizer& norm, int joints,
                                   int frames, const MasConfig& cfg_in,
                                   const std::vector<ViewResample>& resample = {}) {
  MasConfig cfg = cfg_in;
  cfg.validate();
  if (!resample.empty()) {
    require(cfg.consistent_noise, ErrorKind::InvalidArgument,
            "view re-sampling replays 3D noise; it needs consistent noise");
    cfg.retain_noise = true;
  }
  for (const auto& r : resample)
    require(r.step_index >= 0 && r.step_index < cfg.steps && r.slot >= 0 && r.slot < cfg.views,
            ErrorKind::InvalidArgument, "view re-sample entry out of range");

  const NoiseSchedule sched = NoiseSchedule::cosine(cfg.steps);
  const int T = sched.steps();
  const int V = cfg.views;
  Rng rng = make_rng(cfg.seed);

  MasResult res;
  MasTrace& trace = res.trace;
  trace.views = make_camera_ring(V, cfg.elevation, cfg.camera_distance, cfg.focal, cfg.layout);
  std::vector<CameraView>& views = trace.views;

  auto abort = [&](ErrorKind kind, const std::string& msg) {
    throw MasFailure(kind, msg, std::move(trace));
  };

  auto draw_noise = [&]() {
    std::vector<Motion2D> eps;
    if (cfg.consistent_noise) {
      Motion3D eps3d = normal_motion<3>(frames, joints, rng);
      eps = project_noise(eps3d, views);
      if (cfg.retain_noise) trace.noise3d.push_back(std::move(eps3d));
    } else {
      for (int v = 0; v < V; ++v) eps.push_back(normal_motion<2>(frames, joints, rng));
    }
    return eps;
  };

  std::vector<Motion2D> x = draw_noise();
  std::optional<Motion3D> X_prev;
  trace.steps.reserve(static_cast<std::size_t>(T) + 1);

  try {
    for (int t = T; t >= 1; --t) {
      const int step_index = T - t;
      for (const auto& r : resample) {
        if (r.step_index != step_index) continue;
        const CameraView cam = look_at_camera(r.azimuth, cfg.elevation, cfg.camera_distance, cfg.focal);
        const std::size_t slot = static_cast<std::size_t>(r.slot);
        x[slot] = replay_view(trace, cam, t, sched, norm);
        views[slot] = cam;
      }
      if (cfg.retain_noise) trace.view_states.push_back(x);

      std::vector<Motion2D> x0_hat_uv;
      std::vector<Motion2D> x0_hat;
      x0_hat_uv.reserve(static_cast<std::size_t>(V));
      for (int v = 0; v < V; ++v) {
        const Motion2D eps_hat = predictor(x[static_cast<std::size_t>(v)], t, v);
        x0_hat.push_back(predict_x0(x[static_cast<std::size_t>(v)], t, eps_hat, sched));
        clip_x0(x0_hat.back(), cfg.x0_clip);
        x0_hat_uv.push_back(norm.denormalize(x0_hat.back()));
      }

      TriangulationResult tri =
          triangulate(x0_hat_uv, views, X_prev ? &*X_prev : nullptr, cfg.triangulation);
      const std::vector<Motion2D> x0_tilde = detail::normalized_projections(tri.X, views, norm);

      MasStepRecord rec;
      rec.t = t;
      rec.triangulation_iterations = tri.max_iterations;
      rec.triangulation_mean_iterations = tri.mean_iterations;
      rec.degenerate_points = tri.degenerate_points;
      for (int v = 0; v < V; ++v)
        rec.residual_rms.push_back(rms_distance(x0_hat[static_cast<std::size_t>(v)],
                                                x0_tilde[static_cast<std::size_t>(v)]));

      const std::vector<Motion2D> eps = draw_noise();
      for (int v = 0; v < V; ++v) {
        auto& xv = x[static_cast<std::size_t>(v)];
        xv = posterior_step(xv, x0_tilde[static_cast<std::size_t>(v)], t,
                            eps[static_cast<std::size_t>(v)], sched);
        if (!xv.all_finite()) abort(ErrorKind::NonFiniteState, "view state became non-finite at step " + std::to_string(t));
      }
      if (cfg.retain_noise) trace.view_noise.push_back(eps);
      rec.X = tri.X;
      X_prev = std::move(tri.X);
      trace.steps.push_back(std::move(rec));
    }

    std::vector<Motion2D> x0_uv;
    for (const auto& xv : x) x0_uv.push_back(norm.denormalize(xv));
    TriangulationResult final_tri = triangulate(x0_uv, views, &*X_prev, cfg.triangulation);
    const std::vector<Motion2D> back = detail::normalized_projections(final_tri.X, views, norm);
    MasStepRecord rec;
    rec.t = 0;
    rec.triangulation_iterations = final_tri.max_iterations;
    rec.triangulation_mean_iterations = final_tri.mean_iterations;
    rec.degenerate_points = final_tri.degenerate_points;
    for (int v = 0; v < V; ++v)
      rec.residual_rms.push_back(rms_distance(x[static_cast<std::size_t>(v)], back[static_cast<std::size_t>(v)]));
    rec.X = final_tri.X;
    trace.steps.push_back(std::move(rec));
    if (!final_tri.X.all_finite()) abort(ErrorKind::NonFiniteState, "output motion is non-finite");
    res.motion = std::move(final_tri.X);
  } catch (const MasFailure&) {
    throw;
  } catch (const Error& e) {
    throw MasFailure(e.kind(), e.what(), std::move(trace));
  }
  return res;
}

template <NoisePredictor Predictor>
MasResult mas_sample(const Predictor& predictor, const Normalizer& norm, int joints, int frames,
                     const MasConfig& cfg) {
  return mas_sample_dynamic_views(predictor, norm, joints, frames, cfg, {});
}

inline void check_denoiser_for(const Denoiser& d, int steps) {
  const NoiseSchedule sched = NoiseSchedule::cosine(steps);
  require(d.diffusion_steps() == steps && d.schedule_fingerprint() == sched.fingerprint(),
          ErrorKind::VersionMismatch,
          "denoiser trained for " + std::to_string(d.diffusion_steps()) +
              " steps cannot sample with " + std::to_string(steps));
}

inline MasResult mas_sample(const Denoiser& d, int frames, const MasConfig& cfg) {
  check_denoiser_for(d, cfg.steps);
  return mas_sample(d, d.normalizer, d.joints(), frames, cfg);
}

inline MasResult mas_sample_dynamic_views(const Denoiser& d, int frames, const MasConfig& cfg,
                                          const std::vector<ViewResample>& resample) {
  check_denoiser_for(d, cfg.steps);
  return mas_sample_dynamic_views(d, d.normalizer, d.joints(), frames, cfg, resample);
}

}  // namespace mas
