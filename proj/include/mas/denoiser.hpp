#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mas/diffusion.hpp"
#include "mas/error.hpp"
#include "mas/motion.hpp"
#include "mas/rng.hpp"

namespace mas {

/// Affine map between camera-plane uv (meters) and the denoiser's standardized
/// coordinates: x = (uv - mean) / scale.
struct Normalizer {
  double mean_u = 0.0;
  double mean_v = 0.0;
  double scale = 1.0;

  Motion2D normalize(const Motion2D& uv) const {
    Motion2D out = uv;
    out.points().row(0).array() = (uv.points().row(0).array() - mean_u) / scale;
    out.points().row(1).array() = (uv.points().row(1).array() - mean_v) / scale;
    return out;
  }
  Motion2D denormalize(const Motion2D& x) const {
    Motion2D out = x;
    out.points().row(0).array() = x.points().row(0).array() * scale + mean_u;
    out.points().row(1).array() = x.points().row(1).array() * scale + mean_v;
    return out;
  }
};

/// Shape of the sequence denoiser: a per-frame encoder, `mixing_layers`
/// residual temporal convolutions sharing weights over time, and a per-frame
/// decoder. `context_radius` is the total receptive radius in frames and is
/// split as evenly as possible across the mixing layers.
struct Architecture {
  int joints = 16;
  int hidden = 128;
  int mixing_layers = 4;
  int context_radius = 4;
  int time_embed_dim = 64;

  int input_width() const { return 2 * joints; }

  void validate() const {
    require(joints >= 1, ErrorKind::BadArchitecture, "joint count must be positive");
    require(hidden >= 1, ErrorKind::BadArchitecture, "hidden width must be positive");
    require(mixing_layers >= 1, ErrorKind::BadArchitecture, "need at least one mixing layer");
    require(context_radius >= 0, ErrorKind::BadArchitecture, "context radius must be >= 0");
    require(time_embed_dim >= 2 && time_embed_dim % 2 == 0, ErrorKind::BadArchitecture,
            "time embedding width must be a positive even number");
  }

  int layer_radius(int layer) const {
    return context_radius / mixing_layers + (layer < context_radius % mixing_layers ? 1 : 0);
  }

  std::size_t parameter_count() const {
    const std::size_t H = static_cast<std::size_t>(hidden);
    const std::size_t D = static_cast<std::size_t>(input_width());
    const std::size_t E = static_cast<std::size_t>(time_embed_dim);
    std::size_t n = H * D + H + H * E + H;
    for (int k = 0; k < mixing_layers; ++k)
      n += static_cast<std::size_t>(2 * layer_radius(k) + 1) * H * H + H;
    return n + D * H + D;
  }

  bool operator==(const Architecture&) const = default;
};

namespace detail {

inline Eigen::VectorXd timestep_embedding(int t, int dim) {
  const int half = dim / 2;
  Eigen::VectorXd e(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e(i) = std::sin(t * freq);
    e(half + i) = std::cos(t * freq);
  }
  return e;
}

// z += W * shift(h, o), with out-of-range frames reading as zero.
inline void add_shifted(Eigen::MatrixXd& z, const Eigen::Ref<const Eigen::MatrixXd>& W,
                        const Eigen::MatrixXd& h, int o) {
  const Eigen::Index L = h.cols();
  const Eigen::Index n = L - std::abs(o);
  if (n <= 0) return;
  if (o >= 0)
    z.leftCols(n).noalias() += W * h.rightCols(n);
  else
    z.rightCols(n).noalias() += W * h.leftCols(n);
}

}  // namespace detail

/// The learned noise predictor eps_phi(x_t, t).
class Denoiser {
 public:
  Denoiser() = default;

  Denoiser(Architecture arch, int diffusion_steps, std::uint32_t schedule_fingerprint,
           std::vector<double> params)
      : arch_(arch),
        steps_(diffusion_steps),
        fingerprint_(schedule_fingerprint),
        params_(std::move(params)) {
    arch_.validate();
    require(params_.size() == arch_.parameter_count(), ErrorKind::BadArchitecture,
            "parameter vector length does not match the architecture");
  }

  const Architecture& architecture() const noexcept { return arch_; }
  int joints() const noexcept { return arch_.joints; }
  int diffusion_steps() const noexcept { return steps_; }
  std::uint32_t schedule_fingerprint() const noexcept { return fingerprint_; }

  std::vector<double>& parameters() noexcept { return params_; }
  const std::vector<double>& parameters() const noexcept { return params_; }

  Normalizer normalizer;
  std::uint64_t train_step = 0;

  /// Cached activations of one forward pass, consumed by backward().
  struct Tape {
    int t = 0;
    Eigen::MatrixXd x;                   // D x L input
    Eigen::RowVectorXd mask;             // 1 x L, 1 for valid frames
    Eigen::VectorXd embed;               // E
    Eigen::MatrixXd a0;                  // H x L encoder pre-activation
    std::vector<Eigen::MatrixXd> h;      // mixing_layers + 1 hidden states
    std::vector<Eigen::MatrixXd> z;      // mixing layer pre-activations
    Eigen::MatrixXd y;                   // D x L output
  };

  Motion2D evaluate(const Motion2D& x_t, int t) const {
    check_input(x_t, t);
    Tape tape;
    run(x_t.frame_matrix(), t, Eigen::RowVectorXd::Ones(x_t.frames()), tape);
    return to_motion(tape.y, x_t);
  }

  /// Frames with frame_valid[l] == 0 are treated as padding: their hidden
  /// state is zero at every layer and their output is zero.
  Motion2D evaluate(const Motion2D& x_t, int t, std::span<const std::uint8_t> frame_valid) const {
    check_input(x_t, t);
    require(frame_valid.size() == static_cast<std::size_t>(x_t.frames()), ErrorKind::ShapeMismatch,
            "frame mask length differs from frame count");
    Eigen::RowVectorXd mask(x_t.frames());
    for (int l = 0; l < x_t.frames(); ++l) mask(l) = frame_valid[static_cast<std::size_t>(l)] ? 1.0 : 0.0;
    Tape tape;
    run(x_t.frame_matrix(), t, mask, tape);
    return to_motion(tape.y, x_t);
  }

  Motion2D operator()(const Motion2D& x_t, int t, int /*stream*/) const { return evaluate(x_t, t); }

  /// Forward pass on a D x L frame matrix, keeping activations for backward().
  void forward(const Eigen::Ref<const Eigen::MatrixXd>& x, int t, Tape& tape) const {
    require(x.rows() == arch_.input_width(), ErrorKind::ShapeMismatch, "input width mismatch");
    require(t >= 1 && t <= steps_, ErrorKind::StepOutOfRange, "timestep outside the trained range");
    run(x, t, Eigen::RowVectorXd::Ones(x.cols()), tape);
  }

  /// Accumulates dLoss/dparams into `grad` given dLoss/dy for the taped pass.
  void backward(const Tape& tape, const Eigen::MatrixXd& dy_in, std::vector<double>& grad) const {
    require(grad.size() == params_.size(), ErrorKind::ShapeMismatch, "gradient buffer size");
    Layout lay(arch_);
    auto G = [&](std::size_t off, int r, int c) {
      return Eigen::Map<Eigen::MatrixXd>(grad.data() + off, r, c);
    };
    const int H = arch_.hidden, D = arch_.input_width(), E = arch_.time_embed_dim;
    const Eigen::MatrixXd dy = dy_in.array().rowwise() * tape.mask.array();

    G(lay.w_out, D, H).noalias() += dy * tape.h.back().transpose();
    G(lay.b_out, D, 1) += dy.rowwise().sum();
    Eigen::MatrixXd dh = mat(lay.w_out, D, H).transpose() * dy;

    for (int k = arch_.mixing_layers - 1; k >= 0; --k) {
      const std::size_t kk = static_cast<std::size_t>(k);
      dh.array().rowwise() *= tape.mask.array();
      const auto zk = tape.z[kk].array();
      const Eigen::ArrayXXd s = 1.0 / (1.0 + (-zk).exp());
      const Eigen::MatrixXd dz = (dh.array() * s * (1.0 + zk * (1.0 - s))).matrix();
      const Eigen::MatrixXd& hp = tape.h[kk];
      Eigen::MatrixXd dprev = dh;
      const int r = arch_.layer_radius(k);
      const Eigen::Index L = hp.cols();
      for (int o = -r; o <= r; ++o) {
        const std::size_t off = lay.w_mix[kk] + static_cast<std::size_t>(o + r) * H * H;
        const Eigen::Index n = L - std::abs(o);
        if (n <= 0) continue;
        auto W = mat(off, H, H);
        auto dW = G(off, H, H);
        if (o >= 0) {
          dW.noalias() += dz.leftCols(n) * hp.rightCols(n).transpose();
          dprev.rightCols(n).noalias() += W.transpose() * dz.leftCols(n);
        } else {
          dW.noalias() += dz.rightCols(n) * hp.leftCols(n).transpose();
          dprev.leftCols(n).noalias() += W.transpose() * dz.rightCols(n);
        }
      }
      G(lay.b_mix[kk], H, 1) += dz.rowwise().sum();
      dh = std::move(dprev);
    }

    dh.array().rowwise() *= tape.mask.array();
    const Eigen::ArrayXXd s0 = 1.0 / (1.0 + (-tape.a0.array()).exp());
    const Eigen::MatrixXd da0 = (dh.array() * s0 * (1.0 + tape.a0.array() * (1.0 - s0))).matrix();
    const Eigen::VectorXd da_sum = da0.rowwise().sum();
    G(lay.w_in, H, D).noalias() += da0 * tape.x.transpose();
    G(lay.b_in, H, 1) += da_sum;
    G(lay.w_t, H, E).noalias() += da_sum * tape.embed.transpose();
    G(lay.b_t, H, 1) += da_sum;
  }

 private:
  struct Layout {
    std::size_t w_in, b_in, w_t, b_t, w_out, b_out;
    std::vector<std::size_t> w_mix, b_mix;

    explicit Layout(const Architecture& a) {
      const std::size_t H = static_cast<std::size_t>(a.hidden);
      const std::size_t D = static_cast<std::size_t>(a.input_width());
      const std::size_t E = static_cast<std::size_t>(a.time_embed_dim);
      std::size_t off = 0;
      w_in = off; off += H * D;
      b_in = off; off += H;
      w_t = off; off += H * E;
      b_t = off; off += H;
      for (int k = 0; k < a.mixing_layers; ++k) {
        w_mix.push_back(off);
        off += static_cast<std::size_t>(2 * a.layer_radius(k) + 1) * H * H;
        b_mix.push_back(off);
        off += H;
      }
      w_out = off; off += D * H;
      b_out = off;
    }
  };

  Eigen::Map<const Eigen::MatrixXd> mat(std::size_t off, int r, int c) const {
    return {params_.data() + off, r, c};
  }

  void check_input(const Motion2D& x_t, int t) const {
    require(x_t.joints() == arch_.joints, ErrorKind::ShapeMismatch,
            "denoiser expects " + std::to_string(arch_.joints) + " joints, got " +
                std::to_string(x_t.joints()));
    if (t < 1 || t > steps_)
      fail(ErrorKind::StepOutOfRange, "timestep " + std::to_string(t) + " outside [1, " +
                                          std::to_string(steps_) + "]");
  }

  static Motion2D to_motion(const Eigen::MatrixXd& y, const Motion2D& like) {
    Motion2D out(like.frames(), like.joints());
    out.frame_matrix() = y;
    return out;
  }

  void run(const Eigen::Ref<const Eigen::MatrixXd>& x, int t, const Eigen::RowVectorXd& mask,
           Tape& tape) const {
    Layout lay(arch_);
    const int H = arch_.hidden, D = arch_.input_width(), E = arch_.time_embed_dim;
    const Eigen::Index L = x.cols();
    tape.t = t;
    tape.x = x;
    tape.mask = mask;
    tape.embed = detail::timestep_embedding(t, E);
    const Eigen::VectorXd bias0 =
        mat(lay.b_in, H, 1) + mat(lay.w_t, H, E) * tape.embed + mat(lay.b_t, H, 1);
    tape.a0.noalias() = mat(lay.w_in, H, D) * x;
    tape.a0.colwise() += bias0;
    tape.h.assign(static_cast<std::size_t>(arch_.mixing_layers) + 1, Eigen::MatrixXd());
    tape.z.assign(static_cast<std::size_t>(arch_.mixing_layers), Eigen::MatrixXd());
    tape.h[0] = (tape.a0.array() / (1.0 + (-tape.a0.array()).exp())).matrix();
    tape.h[0].array().rowwise() *= mask.array();
    for (int k = 0; k < arch_.mixing_layers; ++k) {
      const std::size_t kk = static_cast<std::size_t>(k);
      const int r = arch_.layer_radius(k);
      Eigen::MatrixXd z = mat(lay.b_mix[kk], H, 1).replicate(1, L);
      for (int o = -r; o <= r; ++o)
        detail::add_shifted(z, mat(lay.w_mix[kk] + static_cast<std::size_t>(o + r) * H * H, H, H),
                            tape.h[kk], o);
      tape.h[kk + 1] = tape.h[kk] + (z.array() / (1.0 + (-z.array()).exp())).matrix();
      tape.h[kk + 1].array().rowwise() *= mask.array();
      tape.z[kk] = std::move(z);
    }
    tape.y.noalias() = mat(lay.w_out, D, H) * tape.h.back();
    tape.y.colwise() += mat(lay.b_out, D, 1).col(0);
    tape.y.array().rowwise() *= mask.array();
  }

  Architecture arch_;
  int steps_ = 0;
  std::uint32_t fingerprint_ = 0;
  std::vector<double> params_;
};

/// Rounds every parameter to the nearest float so checkpoints, which store
/// 32-bit floats, reload bit-identically.
inline void round_to_storage(std::vector<double>& params) {
  for (double& p : params) p = static_cast<double>(static_cast<float>(p));
}

/// Variance-scaled Gaussian init (1/fan_in) with zero biases and a zero output
/// layer, so a fresh denoiser predicts zero noise.
inline Denoiser build_denoiser(const Architecture& arch, const NoiseSchedule& sched,
                               std::uint64_t seed) {
  arch.validate();
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> p;
  p.reserve(arch.parameter_count());
  auto gaussian = [&](std::size_t n, int fan_in) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < n; ++i) p.push_back(sd * normal(rng));
  };
  auto zeros = [&](std::size_t n) { p.insert(p.end(), n, 0.0); };
  const std::size_t H = static_cast<std::size_t>(arch.hidden);
  const std::size_t D = static_cast<std::size_t>(arch.input_width());
  const std::size_t E = static_cast<std::size_t>(arch.time_embed_dim);
  gaussian(H * D, arch.input_width());
  zeros(H);
  gaussian(H * E, arch.time_embed_dim);
  zeros(H);
  for (int k = 0; k < arch.mixing_layers; ++k) {
    const int taps = 2 * arch.layer_radius(k) + 1;
    gaussian(static_cast<std::size_t>(taps) * H * H, taps * arch.hidden);
    zeros(H);
  }
  zeros(D * H + D);
  round_to_storage(p);
  return Denoiser(arch, sched.steps(), sched.fingerprint(), std::move(p));
}

/// Loss of training_loss() for a Denoiser together with its parameter gradient.
/// Same (t, eps) draws as training_loss() for the same seed.
inline double loss_and_gradient(const Denoiser& d, const TrainingBatch& batch,
                                const NoiseSchedule& sched, std::uint64_t seed,
                                std::vector<double>& grad) {
  batch.validate();
  grad.assign(d.parameters().size(), 0.0);
  std::vector<LossDraw> draws;
  draws.reserve(batch.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    draws.push_back(draw_loss_noise(batch.motions[i], i, sched, seed));
    den += batch.confidences[i].sum();
  }
  require(den > 0.0, ErrorKind::EmptyBatch, "every joint-frame in the batch is masked");
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Motion2D& x0 = batch.motions[i];
    const Motion2D x_t = forward_sample(x0, draws[i].t, draws[i].eps, sched);
    Denoiser::Tape tape;
    d.forward(x_t.frame_matrix(), draws[i].t, tape);
    Motion2D resid(x0.frames(), x0.joints());
    resid.frame_matrix() = tape.y;
    resid.points() -= draws[i].eps.points();
    const Eigen::VectorXd& w = batch.confidences[i];
    num += resid.points().colwise().squaredNorm().dot(w);
    resid.points().array().rowwise() *= (2.0 / den) * w.transpose().array();
    d.backward(tape, resid.frame_matrix(), grad);
  }
  return num / den;
}

}  // namespace mas
