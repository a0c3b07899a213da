#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <vector>

#include "mas/denoiser.hpp"
#include "mas/diffusion.hpp"

namespace mas {

struct TrainConfig {
  double learning_rate = 1e-4;
  int steps = 1000;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Random windows of at most this many frames per record; 0 keeps whole motions.
  int crop_frames = 0;
  /// Cosine-anneal the learning rate to zero over this run's steps.
  bool cosine_decay = false;
  /// When positive, the returned weights are an exponential moving average of
  /// the iterates with this decay.
  double ema_decay = 0.0;

  void validate() const {
    require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::InvalidArgument,
            "learning rate must be positive");
    require(steps >= 1, ErrorKind::InvalidArgument, "training needs at least one step");
    require(batch_size >= 1, ErrorKind::InvalidArgument, "batch size must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
            ErrorKind::InvalidArgument, "Adam moment coefficients must lie in [0, 1)");
    require(epsilon > 0.0, ErrorKind::InvalidArgument, "Adam epsilon must be positive");
    require(crop_frames >= 0, ErrorKind::InvalidArgument, "crop length must be >= 0");
    require(ema_decay >= 0.0 && ema_decay < 1.0, ErrorKind::InvalidArgument, "EMA decay must lie in [0, 1)");
  }
};

struct TrainResult {
  Denoiser denoiser;
  std::vector<double> loss_curve;
};

/// Adam on the noise-prediction loss. The step counter lives in the denoiser,
/// so resuming from a checkpoint continues the minibatch stream where it
/// stopped; optimizer moments restart from zero on resume.
inline TrainResult train(Denoiser d, const TrainingBatch& data, const TrainConfig& cfg,
                         const NoiseSchedule& sched,
                         const std::function<void(std::uint64_t, double)>& on_step = {}) {
  cfg.validate();
  require(!data.motions.empty(), ErrorKind::DataEmpty, "training dataset is empty");
  data.validate();
  require(d.schedule_fingerprint() == sched.fingerprint() && d.diffusion_steps() == sched.steps(),
          ErrorKind::VersionMismatch, "denoiser was built for a different noise schedule");
  for (const auto& m : data.motions)
    require(m.joints() == d.joints(), ErrorKind::ShapeMismatch, "dataset joint count mismatch");

  std::vector<double>& theta = d.parameters();
  std::vector<double> m1(theta.size(), 0.0), m2(theta.size(), 0.0), grad;
  std::vector<double> ema = theta;
  TrainResult result;
  result.loss_curve.reserve(static_cast<std::size_t>(cfg.steps));

  for (int local = 1; local <= cfg.steps; ++local) {
    const std::uint64_t step = d.train_step;
    Rng rng = make_rng(derive_seed(cfg.seed, {step, 0}));
    TrainingBatch batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto idx = static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<int>(data.motions.size()) - 1));
      const Motion2D& m = data.motions[idx];
      const Eigen::VectorXd& w = data.confidences[idx];
      if (cfg.crop_frames > 0 && m.frames() > cfg.crop_frames) {
        const int start = uniform_int(rng, 0, m.frames() - cfg.crop_frames);
        const Eigen::Index J = m.joints();
        Motion2D window(cfg.crop_frames, m.joints(),
                        m.points().middleCols(start * J, cfg.crop_frames * J));
        batch.motions.push_back(std::move(window));
        batch.confidences.push_back(w.segment(start * J, cfg.crop_frames * J));
      } else {
        batch.motions.push_back(m);
        batch.confidences.push_back(w);
      }
    }
    const double loss = loss_and_gradient(d, batch, sched, derive_seed(cfg.seed, {step, 1}), grad);
    if (!std::isfinite(loss))
      fail(ErrorKind::NonFiniteLoss, "loss diverged at step " + std::to_string(step));

    const double c1 = 1.0 - std::pow(cfg.beta1, local);
    const double c2 = 1.0 - std::pow(cfg.beta2, local);
    const double lr =
        cfg.cosine_decay
            ? 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * (local - 1) / cfg.steps))
            : cfg.learning_rate;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * grad[i];
      m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      theta[i] -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg.epsilon);
    }
    if (cfg.ema_decay > 0.0)
      for (std::size_t i = 0; i < theta.size(); ++i) ema[i] = cfg.ema_decay * ema[i] + (1.0 - cfg.ema_decay) * theta[i];
    ++d.train_step;
    result.loss_curve.push_back(loss);
    if (on_step) on_step(d.train_step, loss);
  }
  if (cfg.ema_decay > 0.0) theta = std::move(ema);
  round_to_storage(theta);
  result.denoiser = std::move(d);
  return result;
}

/// Exponential moving average used to judge loss trends.
inline std::vector<double> smooth_curve(const std::vector<double>& curve, double decay = 0.98) {
  std::vector<double> out;
  out.reserve(curve.size());
  double acc = 0.0, weight = 0.0;
  for (double v : curve) {
    acc = decay * acc + (1.0 - decay) * v;
    weight = decay * weight + (1.0 - decay);
    out.push_back(acc / weight);
  }
  return out;
}

}  // namespace mas
