#pragma once

#include <zlib.h>

#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "mas/error.hpp"
#include "mas/motion.hpp"
#include "mas/rng.hpp"

namespace mas {

/// DDPM coefficients for steps t = 1..T. Arrays are indexed by t directly;
/// index 0 holds the closure alpha_bar_0 = 1 (beta_0 = sigma_0 = 0).
class NoiseSchedule {
 public:
  static constexpr double kMaxBeta = 0.999;
  static constexpr double kCosineOffset = 0.008;

  /// Cosine schedule: alpha_bar(t) = g(t/T) / g(0), g(u) = cos^2((u + s)/(1 + s) * pi/2).
  static NoiseSchedule cosine(int steps) {
    require(steps >= 2, ErrorKind::InvalidArgument, "schedule needs at least two steps");
    auto g = [](double u) {
      const double c = std::cos((u + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi / 2);
      return c * c;
    };
    std::vector<double> beta(static_cast<std::size_t>(steps) + 1, 0.0);
    for (int t = 1; t <= steps; ++t) {
      const double ratio = g(static_cast<double>(t) / steps) / g(static_cast<double>(t - 1) / steps);
      beta[static_cast<std::size_t>(t)] = std::min(1.0 - ratio, kMaxBeta);
    }
    return NoiseSchedule(std::move(beta));
  }

  /// Builds a schedule from beta_1..beta_T (beta[0] is ignored).
  explicit NoiseSchedule(std::vector<double> beta) : beta_(std::move(beta)) {
    require(beta_.size() >= 3, ErrorKind::InvalidArgument, "schedule needs at least two steps");
    const std::size_t n = beta_.size();
    beta_[0] = 0.0;
    alpha_.assign(n, 1.0);
    alpha_bar_.assign(n, 1.0);
    sigma_.assign(n, 0.0);
    for (std::size_t t = 1; t < n; ++t) {
      require(beta_[t] > 0.0 && beta_[t] <= kMaxBeta, ErrorKind::InvalidArgument,
              "beta must lie in (0, 0.999]");
      alpha_[t] = 1.0 - beta_[t];
      alpha_bar_[t] = alpha_bar_[t - 1] * alpha_[t];
      sigma_[t] = std::sqrt(beta_[t] * (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]));
    }
  }

  int steps() const noexcept { return static_cast<int>(beta_.size()) - 1; }

  double beta(int t) const { return beta_.at(checked(t, 1)); }
  double alpha(int t) const { return alpha_.at(checked(t, 1)); }
  double alpha_bar(int t) const { return alpha_bar_.at(checked(t, 0)); }
  double sigma(int t) const { return sigma_.at(checked(t, 1)); }

  /// Posterior mean weights: mu = x0_coef(t) * x0 + xt_coef(t) * x_t.
  double x0_coef(int t) const {
    return std::sqrt(alpha_bar(t - 1)) * beta(t) / (1.0 - alpha_bar(t));
  }
  double xt_coef(int t) const {
    return std::sqrt(alpha(t)) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
  }

  void check_step(int t) const { (void)checked(t, 1); }

  /// CRC-32 of the step count and the beta bytes; identifies the schedule a
  /// denoiser was trained with.
  std::uint32_t fingerprint() const {
    uLong crc = crc32(0L, Z_NULL, 0);
    const std::uint32_t T = static_cast<std::uint32_t>(steps());
    crc = crc32(crc, reinterpret_cast<const Bytef*>(&T), sizeof(T));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(beta_.data() + 1),
                static_cast<uInt>((beta_.size() - 1) * sizeof(double)));
    return static_cast<std::uint32_t>(crc);
  }

 private:
  std::size_t checked(int t, int lo) const {
    if (t < lo || t > steps())
      fail(ErrorKind::StepOutOfRange,
           "step " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
               std::to_string(steps()) + "]");
    return static_cast<std::size_t>(t);
  }

  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  std::vector<double> sigma_;
};

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
template <int Dim>
Motion<Dim> forward_sample(const Motion<Dim>& x0, int t, const Motion<Dim>& eps,
                           const NoiseSchedule& sched) {
  sched.check_step(t);
  x0.check_shape(eps);
  const double ab = sched.alpha_bar(t);
  Motion<Dim> out = x0;
  out.points() = std::sqrt(ab) * x0.points() + std::sqrt(1.0 - ab) * eps.points();
  return out;
}

/// Clean-sample estimate from a noise prediction.
template <int Dim>
Motion<Dim> predict_x0(const Motion<Dim>& x_t, int t, const Motion<Dim>& eps_hat,
                       const NoiseSchedule& sched) {
  sched.check_step(t);
  x_t.check_shape(eps_hat);
  const double ab = sched.alpha_bar(t);
  Motion<Dim> out = x_t;
  out.points() = (x_t.points() - std::sqrt(1.0 - ab) * eps_hat.points()) / std::sqrt(ab);
  return out;
}

/// Clamps every coordinate of a clean-sample estimate to [-bound, bound];
/// bound <= 0 leaves it unchanged.
template <int Dim>
void clip_x0(Motion<Dim>& x0_hat, double bound) {
  if (bound > 0.0) x0_hat.points() = x0_hat.points().cwiseMax(-bound).cwiseMin(bound);
}

/// One reverse step x_t -> x_{t-1} drawn from q(x_{t-1} | x_t, x0_target).
/// sigma_1 = 0, so the final step returns x0_target.
template <int Dim>
Motion<Dim> posterior_step(const Motion<Dim>& x_t, const Motion<Dim>& x0_target, int t,
                           const Motion<Dim>& noise, const NoiseSchedule& sched) {
  sched.check_step(t);
  x_t.check_shape(x0_target);
  x_t.check_shape(noise);
  Motion<Dim> out = x_t;
  out.points() = sched.x0_coef(t) * x0_target.points() + sched.xt_coef(t) * x_t.points();
  if (t > 1) out.points() += sched.sigma(t) * noise.points();
  return out;
}

/// Anything that predicts the noise in x_t. `stream` identifies the chain the
/// input belongs to (a camera view for multi-view sampling, a record index
/// during training); learned denoisers ignore it.
template <class P>
concept NoisePredictor = requires(const P& p, const Motion2D& x, int t, int stream) {
  { p(x, t, stream) } -> std::convertible_to<Motion2D>;
};

/// Plain single-view DDPM ancestral sampling from x_T ~ N(0, I). A positive
/// x0_clip clamps each clean estimate before the posterior step.
template <NoisePredictor Predictor>
Motion2D ancestral_sample_2d(const Predictor& predictor, int frames, int joints,
                             const NoiseSchedule& sched, std::uint64_t seed, double x0_clip = 0.0) {
  Rng rng = make_rng(seed);
  Motion2D x = normal_motion<2>(frames, joints, rng);
  for (int t = sched.steps(); t >= 1; --t) {
    const Motion2D eps_hat = predictor(x, t, 0);
    Motion2D x0_hat = predict_x0(x, t, eps_hat, sched);
    clip_x0(x0_hat, x0_clip);
    const Motion2D noise = normal_motion<2>(frames, joints, rng);
    x = posterior_step(x, x0_hat, t, noise, sched);
    if (!x.all_finite()) fail(ErrorKind::NonFiniteState, "ancestral chain produced non-finite values");
  }
  return x;
}

/// Training data for the noise-prediction loss. Motions live in the
/// denoiser's normalized coordinate space; confidences are per joint-frame
/// weights in [0, 1] (0 removes the entry from the loss).
struct TrainingBatch {
  std::vector<Motion2D> motions;
  std::vector<Eigen::VectorXd> confidences;  // frames*joints entries, frame-major

  std::size_t size() const noexcept { return motions.size(); }

  void validate() const {
    require(!motions.empty(), ErrorKind::EmptyBatch, "training batch is empty");
    require(confidences.size() == motions.size(), ErrorKind::ShapeMismatch,
            "one confidence mask per motion required");
    for (std::size_t i = 0; i < motions.size(); ++i)
      require(confidences[i].size() == motions[i].size(), ErrorKind::ShapeMismatch,
              "confidence mask does not match motion " + std::to_string(i));
  }
};

/// The (t, eps) draw for one batch member. Draws depend only on the batch seed
/// and the member's index, so later members are unaffected by earlier ones.
struct LossDraw {
  int t;
  Motion2D eps;
};

inline LossDraw draw_loss_noise(const Motion2D& x0, std::size_t index, const NoiseSchedule& sched,
                                std::uint64_t seed) {
  Rng rng = make_rng(derive_seed(seed, {index}));
  const int t = uniform_int(rng, 1, sched.steps());
  return {t, normal_motion<2>(x0.frames(), x0.joints(), rng)};
}

/// Weighted sum of squared 2D errors and total weight for one batch member.
inline std::pair<double, double> weighted_sq_error(const Motion2D& eps_hat, const Motion2D& eps,
                                                   const Eigen::VectorXd& weights) {
  const Eigen::RowVectorXd sq = (eps_hat.points() - eps.points()).colwise().squaredNorm();
  return {sq.dot(weights), weights.sum()};
}

/// Mean over confidence-weighted joint-frames of ||eps_hat - eps||^2 with
/// w(t) = 1 and t ~ U{1..T}.
template <NoisePredictor Predictor>
double training_loss(const Predictor& predictor, const TrainingBatch& batch,
                     const NoiseSchedule& sched, std::uint64_t seed) {
  batch.validate();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const LossDraw draw = draw_loss_noise(batch.motions[i], i, sched, seed);
    const Motion2D x_t = forward_sample(batch.motions[i], draw.t, draw.eps, sched);
    const Motion2D eps_hat = predictor(x_t, draw.t, static_cast<int>(i));
    const auto [n, d] = weighted_sq_error(eps_hat, draw.eps, batch.confidences[i]);
    num += n;
    den += d;
  }
  require(den > 0.0, ErrorKind::EmptyBatch, "every joint-frame in the batch is masked");
  return num / den;
}

}  // namespace mas
