#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "mas/denoiser.hpp"
#include "mas/error.hpp"
#include "mas/geometry.hpp"
#include "mas/motion.hpp"
#include "mas/rng.hpp"

namespace mas {

/// Kinematic tree. parents[j] is the parent joint, -1 for the root and
/// kAuxiliary for free joints (e.g. a ball) that have no bone. Joint j's bone
/// runs from its parent along rest_directions[j] (body frame, +z up, +x right,
/// +y forward) for bone_lengths[j] meters.
struct Skeleton {
  static constexpr int kAuxiliary = -2;

  std::vector<std::string> names;
  std::vector<int> parents;
  std::vector<double> bone_lengths;
  std::vector<Eigen::Vector3d> rest_directions;

  int joints() const noexcept { return static_cast<int>(parents.size()); }

  bool has_auxiliary() const {
    for (int p : parents)
      if (p == kAuxiliary) return true;
    return false;
  }

  /// (parent, child) pairs for every real bone.
  std::vector<std::pair<int, int>> bones() const {
    std::vector<std::pair<int, int>> out;
    for (int j = 0; j < joints(); ++j)
      if (parents[static_cast<std::size_t>(j)] >= 0) out.emplace_back(parents[static_cast<std::size_t>(j)], j);
    return out;
  }

  void validate() const {
    const std::size_t n = parents.size();
    require(n >= 1 && names.size() == n && bone_lengths.size() == n && rest_directions.size() == n,
            ErrorKind::ShapeMismatch, "skeleton arrays must have one entry per joint");
    require(parents[0] == -1, ErrorKind::InvalidArgument, "joint 0 must be the root");
    for (std::size_t j = 1; j < n; ++j) {
      const int p = parents[j];
      require(p == kAuxiliary || (p >= 0 && static_cast<std::size_t>(p) < j),
              ErrorKind::InvalidArgument, "parents must precede children (tree rooted at joint 0)");
      if (p >= 0) {
        require(parents[static_cast<std::size_t>(p)] != kAuxiliary, ErrorKind::InvalidArgument,
                "auxiliary joints cannot have children");
        require(bone_lengths[j] > 0.0, ErrorKind::InvalidArgument, "bone lengths must be positive");
        require(std::abs(rest_directions[j].norm() - 1.0) < 1e-12, ErrorKind::InvalidArgument,
                "rest directions must be unit vectors");
      }
    }
  }

  /// 16 joints, the same count as the AlphaPose body model. Sized so that any
  /// pose stays within 0.82 m of the pelvis.
  static Skeleton human16() {
    Skeleton s;
    auto add = [&](std::string name, int parent, double len, Eigen::Vector3d dir) {
      s.names.push_back(std::move(name));
      s.parents.push_back(parent);
      s.bone_lengths.push_back(len);
      s.rest_directions.push_back(dir);
    };
    const Eigen::Vector3d up = Eigen::Vector3d::UnitZ(), down = -up;
    const Eigen::Vector3d right = Eigen::Vector3d::UnitX(), left = -right;
    add("pelvis", -1, 0.0, up);
    add("r_hip", 0, 0.10, right);
    add("r_knee", 1, 0.30, down);
    add("r_ankle", 2, 0.30, down);
    add("l_hip", 0, 0.10, left);
    add("l_knee", 4, 0.30, down);
    add("l_ankle", 5, 0.30, down);
    add("thorax", 0, 0.30, up);
    add("upper_neck", 7, 0.08, up);
    add("head_top", 8, 0.12, up);
    add("r_shoulder", 7, 0.14, right);
    add("r_elbow", 10, 0.20, down);
    add("r_wrist", 11, 0.18, down);
    add("l_shoulder", 7, 0.14, left);
    add("l_elbow", 13, 0.20, down);
    add("l_wrist", 14, 0.18, down);
    return s;
  }

  /// human16 plus one auxiliary ball joint.
  static Skeleton human16_with_ball() {
    Skeleton s = human16();
    s.names.emplace_back("ball");
    s.parents.push_back(kAuxiliary);
    s.bone_lengths.push_back(0.0);
    s.rest_directions.push_back(Eigen::Vector3d::UnitZ());
    return s;
  }
};

enum class MotionFamily { Walk, Swing, Jump, Orbit, Mixed };

inline std::string to_string(MotionFamily f) {
  switch (f) {
    case MotionFamily::Walk: return "walk";
    case MotionFamily::Swing: return "swing";
    case MotionFamily::Jump: return "jump";
    case MotionFamily::Orbit: return "orbit";
    case MotionFamily::Mixed: return "mixed";
  }
  return "unknown";
}

inline MotionFamily motion_family_from_string(const std::string& s) {
  for (auto f : {MotionFamily::Walk, MotionFamily::Swing, MotionFamily::Jump, MotionFamily::Orbit,
                 MotionFamily::Mixed})
    if (to_string(f) == s) return f;
  fail(ErrorKind::BadFamily, "unknown motion family '" + s + "'");
}

struct MotionFamilyParams {
  MotionFamily family = MotionFamily::Mixed;
  /// Multiplier on the family's joint-angle and root amplitudes.
  double amplitude_min = 0.7;
  double amplitude_max = 1.3;
  /// Base cycle frequency in Hz.
  double frequency_min = 0.6;
  double frequency_max = 1.4;
  double phase_min = 0.0;
  double phase_max = 2.0 * std::numbers::pi;
  int length_min = 32;
  int length_max = 128;
  double fps = 20.0;

  static constexpr double kMaxAmplitude = 1.5;

  void validate() const {
    auto finite_range = [](double lo, double hi) {
      return std::isfinite(lo) && std::isfinite(hi) && lo <= hi;
    };
    require(finite_range(amplitude_min, amplitude_max) && amplitude_min >= 0.0 &&
                amplitude_max <= kMaxAmplitude,
            ErrorKind::BadFamily, "amplitude range must lie within [0, 1.5]");
    require(finite_range(frequency_min, frequency_max) && frequency_min >= 0.0,
            ErrorKind::BadFamily, "frequency range must be finite and non-negative");
    require(finite_range(phase_min, phase_max), ErrorKind::BadFamily, "phase range must be finite");
    require(length_min >= 1 && length_min <= length_max, ErrorKind::BadFamily,
            "length range must be non-empty");
    require(std::isfinite(fps) && fps > 0.0, ErrorKind::BadFamily, "fps must be positive");
  }
};

namespace detail {

// One joint-angle channel: bias + amp * sin(2 pi f mult t + phase).
struct Channel {
  double bias = 0.0;
  double amp = 0.0;
  double mult = 1.0;
  double phase = 0.0;
};

// Channels 0..2 rotate joint j's bone about body x (flex), y (abduction), z (twist).
struct FamilyTemplate {
  std::vector<std::array<Channel, 3>> joints;
  Eigen::Vector3d root_amp = Eigen::Vector3d::Zero();  // sway x, sway y, bob z (meters)
  double root_twist = 0.0;
  double lean = 0.0;
};

inline FamilyTemplate family_template(MotionFamily fam, int joints) {
  constexpr double pi = std::numbers::pi;
  FamilyTemplate f;
  f.joints.assign(static_cast<std::size_t>(joints), {});
  auto ch = [&](int j, int c) -> Channel& { return f.joints[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)]; };
  switch (fam) {
    case MotionFamily::Walk:
      ch(2, 0) = {0.0, 0.45, 1.0, 0.0};
      ch(5, 0) = {0.0, 0.45, 1.0, pi};
      ch(3, 0) = {-0.35, 0.35, 1.0, -pi / 2};
      ch(6, 0) = {-0.35, 0.35, 1.0, pi / 2};
      ch(11, 0) = {0.0, 0.35, 1.0, pi};
      ch(14, 0) = {0.0, 0.35, 1.0, 0.0};
      ch(12, 0) = {0.3, 0.15, 1.0, pi};
      ch(15, 0) = {0.3, 0.15, 1.0, 0.0};
      ch(7, 2) = {0.0, 0.1, 1.0, pi};
      f.root_amp = {0.03, 0.0, 0.03};
      f.root_twist = 0.1;
      break;
    case MotionFamily::Swing:
      ch(7, 2) = {0.0, 0.6, 1.0, 0.0};
      ch(7, 0) = {0.15, 0.1, 1.0, 0.5};
      ch(11, 0) = {0.6, 1.2, 1.0, 0.0};
      ch(11, 1) = {0.2, 0.4, 1.0, pi / 2};
      ch(14, 0) = {0.6, 1.2, 1.0, 0.3};
      ch(14, 1) = {-0.2, 0.4, 1.0, pi / 2};
      ch(12, 0) = {0.4, 0.3, 1.0, 0.0};
      ch(15, 0) = {0.4, 0.3, 1.0, 0.0};
      ch(2, 0) = {0.1, 0.1, 1.0, 0.0};
      ch(5, 0) = {0.1, 0.1, 1.0, pi};
      ch(3, 0) = {-0.2, 0.1, 1.0, 0.0};
      ch(6, 0) = {-0.2, 0.1, 1.0, pi};
      f.root_amp = {0.04, 0.04, 0.02};
      f.root_twist = 0.3;
      break;
    case MotionFamily::Jump:
      ch(2, 0) = {0.4, 0.4, 1.0, 0.0};
      ch(5, 0) = {0.4, 0.4, 1.0, 0.0};
      ch(3, 0) = {-0.6, 0.5, 1.0, 0.0};
      ch(6, 0) = {-0.6, 0.5, 1.0, 0.0};
      ch(11, 0) = {1.0, 1.2, 1.0, pi};
      ch(14, 0) = {1.0, 1.2, 1.0, pi};
      ch(11, 1) = {0.2, 0.2, 1.0, pi};
      ch(14, 1) = {-0.2, 0.2, 1.0, pi};
      ch(7, 0) = {0.15, 0.2, 1.0, 0.0};
      ch(9, 0) = {0.0, 0.15, 1.0, 0.0};
      f.root_amp = {0.0, 0.0, 0.08};
      f.lean = 0.05;
      break;
    case MotionFamily::Orbit:
      ch(7, 2) = {0.0, 0.5, 1.0, 0.0};
      ch(11, 0) = {0.8, 0.8, 1.0, 0.0};
      ch(11, 1) = {0.6, 0.4, 1.0, pi / 2};
      ch(14, 0) = {0.8, 0.8, 1.0, pi};
      ch(14, 1) = {-0.6, 0.4, 1.0, pi / 2};
      ch(12, 0) = {0.3, 0.3, 2.0, 0.0};
      ch(15, 0) = {0.3, 0.3, 2.0, 0.0};
      ch(2, 0) = {0.1, 0.2, 1.0, 0.0};
      ch(5, 0) = {0.1, 0.2, 1.0, pi};
      ch(3, 0) = {-0.3, 0.2, 1.0, 0.0};
      ch(6, 0) = {-0.3, 0.2, 1.0, pi};
      f.root_amp = {0.03, 0.03, 0.03};
      f.root_twist = 0.4;
      break;
    case MotionFamily::Mixed:
      break;
  }
  return f;
}

inline Eigen::Matrix3d joint_rotation(double flex, double abd, double twist) {
  return (Eigen::AngleAxisd(twist, Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(flex, Eigen::Vector3d::UnitX()) *
          Eigen::AngleAxisd(abd, Eigen::Vector3d::UnitY()))
      .toRotationMatrix();
}

}  // namespace detail

/// Procedural 3D motion: joint angles are sums of sinusoids fed through
/// forward kinematics, so every frame has the skeleton's exact bone lengths.
/// The pelvis oscillates around the origin by at most 0.15 m, keeping every
/// joint inside the unit ball.
inline Motion3D sample_motion3d(const Skeleton& skel, const MotionFamilyParams& fam,
                                std::uint64_t seed) {
  fam.validate();
  skel.validate();
  Rng rng = make_rng(seed);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  MotionFamily family = fam.family;
  if (family == MotionFamily::Orbit && !skel.has_auxiliary())
    fail(ErrorKind::BadFamily, "orbiting-object family needs an auxiliary joint");
  if (family == MotionFamily::Mixed) {
    const int options = skel.has_auxiliary() ? 4 : 3;
    const int pick = uniform_int(rng, 0, options - 1);
    family = std::array{MotionFamily::Walk, MotionFamily::Swing, MotionFamily::Jump,
                        MotionFamily::Orbit}[static_cast<std::size_t>(pick)];
  }

  const int J = skel.joints();
  const int L = uniform_int(rng, fam.length_min, fam.length_max);
  const double amplitude = uniform(rng, fam.amplitude_min, fam.amplitude_max);
  const double freq = uniform(rng, fam.frequency_min, fam.frequency_max);
  const double phase = uniform(rng, fam.phase_min, fam.phase_max);
  const double heading = uniform(rng, 0.0, two_pi);

  detail::FamilyTemplate tmpl = detail::family_template(family, std::max(J, 16));
  // Per-record variation: amplitude jitter, phase jitter and a second harmonic.
  struct Harmonic {
    double amp, phase;
  };
  std::vector<std::array<Harmonic, 3>> second(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) {
    for (int c = 0; c < 3; ++c) {
      auto& chn = tmpl.joints[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
      chn.amp *= uniform(rng, 0.6, 1.4);
      chn.bias *= uniform(rng, 0.7, 1.3);
      chn.phase += uniform(rng, -0.4, 0.4);
      second[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)] = {
          chn.amp * uniform(rng, 0.0, 0.3), uniform(rng, 0.0, two_pi)};
    }
  }
  const Eigen::Vector3d root_phase(uniform(rng, 0.0, two_pi), uniform(rng, 0.0, two_pi),
                                   uniform(rng, 0.0, two_pi));
  const double ball_radius = uniform(rng, 0.35, 0.55);
  const double ball_height = uniform(rng, 0.05, 0.25);
  const double ball_mult = uniform_int(rng, 0, 1) == 0 ? 1.0 : 2.0;

  Motion3D X(L, J);
  std::vector<Eigen::Matrix3d> frame(static_cast<std::size_t>(J));
  for (int l = 0; l < L; ++l) {
    const double time = l / fam.fps;
    const double w = two_pi * freq * time + phase;
    auto angle = [&](int j, int c) {
      const auto& chn = tmpl.joints[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
      const auto& h = second[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
      return amplitude * (chn.bias + chn.amp * std::sin(chn.mult * w + chn.phase) +
                          h.amp * std::sin(2.0 * chn.mult * w + h.phase));
    };
    const Eigen::Vector3d root(
        amplitude * tmpl.root_amp.x() * std::sin(w + root_phase.x()),
        amplitude * tmpl.root_amp.y() * std::sin(w + root_phase.y()),
        amplitude * tmpl.root_amp.z() * std::sin(2.0 * w + root_phase.z()));
    const Eigen::Matrix3d root_rot =
        detail::joint_rotation(amplitude * tmpl.lean, 0.0,
                               heading + amplitude * tmpl.root_twist * std::sin(w));
    X(l, 0) = root;
    frame[0] = root_rot;
    for (int j = 1; j < J; ++j) {
      const int p = skel.parents[static_cast<std::size_t>(j)];
      if (p == Skeleton::kAuxiliary) {
        const double a = ball_mult * w;
        const Eigen::Vector3d local(ball_radius * std::cos(a), ball_radius * std::sin(a),
                                    ball_height * std::sin(2.0 * a + 1.0));
        X(l, j) = root + Eigen::AngleAxisd(heading, Eigen::Vector3d::UnitZ()) * local;
        frame[static_cast<std::size_t>(j)] = root_rot;
        continue;
      }
      const Eigen::Matrix3d R = frame[static_cast<std::size_t>(p)] *
                                detail::joint_rotation(angle(j, 0), angle(j, 1), angle(j, 2));
      frame[static_cast<std::size_t>(j)] = R;
      X(l, j) = X(l, p) + skel.bone_lengths[static_cast<std::size_t>(j)] *
                              (R * skel.rest_directions[static_cast<std::size_t>(j)]);
    }
  }
  return X;
}

/// Camera model used to turn ground-truth 3D motions into 2D records: yaw drawn
/// uniformly from [yaw_min, yaw_max), constant pitch and distance.
struct CameraDistribution {
  double yaw_min = 0.0;
  double yaw_max = 2.0 * std::numbers::pi;
  double pitch = 0.2;
  double distance = 7.0;
  double focal = 7.0;

  void validate() const {
    require(std::isfinite(yaw_min) && std::isfinite(yaw_max) && yaw_min <= yaw_max,
            ErrorKind::InvalidArgument, "yaw range must be finite and ordered");
    require(distance > 1.0, ErrorKind::InvalidArgument, "camera distance must exceed 1");
    require(focal > 0.0, ErrorKind::InvalidArgument, "focal length must be positive");
  }

  CameraView camera(double yaw) const { return look_at_camera(yaw, pitch, distance, focal); }
};

struct DatasetManifest {
  static constexpr int kFormatVersion = 1;

  std::size_t count = 0;
  int joints = 0;
  double fps = 0.0;
  Normalizer normalization;
  CameraDistribution cameras;
  MotionFamilyParams family;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
  double dropout_prob = 0.0;
  int format_version = kFormatVersion;
};

struct DatasetRecord {
  Motion2D uv;
  /// frames*joints confidences in [0, 1], frame-major.
  Eigen::VectorXd confidence;
  double yaw = 0.0;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<DatasetRecord> records;
  /// Ground truth behind each record; evaluation-only.
  std::vector<Motion3D> ground_truth;
};

/// Pooled mean/std over all record coordinates.
inline Normalizer compute_normalization(const std::vector<DatasetRecord>& records) {
  double su = 0.0, sv = 0.0;
  double n = 0.0;
  for (const auto& r : records) {
    su += r.uv.points().row(0).sum();
    sv += r.uv.points().row(1).sum();
    n += static_cast<double>(r.uv.size());
  }
  require(n > 0.0, ErrorKind::DataEmpty, "cannot normalize an empty dataset");
  Normalizer norm;
  norm.mean_u = su / n;
  norm.mean_v = sv / n;
  double ss = 0.0;
  for (const auto& r : records) {
    ss += (r.uv.points().row(0).array() - norm.mean_u).square().sum();
    ss += (r.uv.points().row(1).array() - norm.mean_v).square().sum();
  }
  norm.scale = std::sqrt(ss / (2.0 * n));
  require(norm.scale > 0.0, ErrorKind::DataEmpty, "dataset has zero spread");
  return norm;
}

/// Adds i.i.d. positional noise and drops joint-frames with probability
/// dropout_prob by zeroing their confidence.
inline std::vector<DatasetRecord> corrupt_records(std::vector<DatasetRecord> records,
                                                  double noise_sigma, double dropout_prob,
                                                  std::uint64_t seed) {
  require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), ErrorKind::InvalidArgument,
          "noise sigma must be >= 0");
  require(dropout_prob >= 0.0 && dropout_prob < 1.0, ErrorKind::InvalidArgument,
          "dropout probability must lie in [0, 1)");
  if (noise_sigma == 0.0 && dropout_prob == 0.0) return records;
  for (std::size_t i = 0; i < records.size(); ++i) {
    Rng rng = make_rng(derive_seed(seed, {i}));
    std::normal_distribution<double> normal(0.0, noise_sigma);
    std::bernoulli_distribution drop(dropout_prob);
    auto& r = records[i];
    for (Eigen::Index n = 0; n < r.uv.size(); ++n) {
      if (noise_sigma > 0.0) {
        r.uv.points()(0, n) += normal(rng);
        r.uv.points()(1, n) += normal(rng);
      }
      if (dropout_prob > 0.0 && drop(rng)) r.confidence(n) = 0.0;
    }
  }
  return records;
}

/// n single-view records, each the perspective projection of a fresh ground
/// truth motion through a camera drawn from `cameras`.
inline Dataset build_dataset(const Skeleton& skel, const MotionFamilyParams& fam, std::size_t n,
                             const CameraDistribution& cameras, std::uint64_t seed,
                             double noise_sigma = 0.0, double dropout_prob = 0.0) {
  require(n >= 1, ErrorKind::DataEmpty, "dataset needs at least one record");
  cameras.validate();
  Dataset ds;
  ds.records.reserve(n);
  ds.ground_truth.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Motion3D X = sample_motion3d(skel, fam, derive_seed(seed, {i, 0}));
    Rng rng = make_rng(derive_seed(seed, {i, 1}));
    const double yaw = cameras.yaw_min == cameras.yaw_max
                           ? cameras.yaw_min
                           : uniform(rng, cameras.yaw_min, cameras.yaw_max);
    DatasetRecord rec{perspective_project(X, cameras.camera(yaw)),
                      Eigen::VectorXd::Ones(X.size()), yaw};
    ds.records.push_back(std::move(rec));
    ds.ground_truth.push_back(std::move(X));
  }
  ds.records = corrupt_records(std::move(ds.records), noise_sigma, dropout_prob,
                               derive_seed(seed, {0xC0221u}));
  DatasetManifest& m = ds.manifest;
  m.count = n;
  m.joints = skel.joints();
  m.fps = fam.fps;
  m.normalization = compute_normalization(ds.records);
  m.cameras = cameras;
  m.family = fam;
  m.seed = seed;
  m.noise_sigma = noise_sigma;
  m.dropout_prob = dropout_prob;
  return ds;
}

/// Training view of a dataset: normalized motions with their confidences.
inline TrainingBatch to_training_batch(const Dataset& ds, const Normalizer& norm) {
  TrainingBatch batch;
  for (const auto& r : ds.records) {
    batch.motions.push_back(norm.normalize(r.uv));
    batch.confidences.push_back(r.confidence);
  }
  return batch;
}

}  // namespace mas
