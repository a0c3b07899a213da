#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mas/binary_io.hpp"
#include "mas/denoiser.hpp"
#include "mas/motion.hpp"
#include "mas/synthdata.hpp"

namespace mas {

// Motion file layout (little-endian), shared by 2D datasets, 3D ground-truth
// sidecars and sampler outputs:
//   "MASMOTN\0"                 8 bytes
//   u32 version, u32 dims (2 or 3), u32 joints
//   f64 fps, u64 record count
//   f64 mean_u, mean_v, scale  normalization stats (identity for 3D files)
//   per record: u32 frames, frames*joints*dims f32 coordinates (frame-major),
//               frames*joints f32 confidences
inline constexpr std::string_view kMotionMagic{"MASMOTN\0", 8};
inline constexpr std::uint32_t kMotionFormatVersion = 1;

template <int Dim>
struct MotionSet {
  int joints = 0;
  double fps = 20.0;
  Normalizer normalization;
  std::vector<Motion<Dim>> motions;
  std::vector<Eigen::VectorXd> confidences;
};

template <int Dim>
std::vector<char> encode_motion_set(const MotionSet<Dim>& set) {
  require(set.confidences.empty() || set.confidences.size() == set.motions.size(),
          ErrorKind::ShapeMismatch, "confidences must be absent or one per motion");
  io::ByteWriter w;
  w.put_bytes(kMotionMagic);
  w.put<std::uint32_t>(kMotionFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(Dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.joints));
  w.put<double>(set.fps);
  w.put<std::uint64_t>(set.motions.size());
  w.put<double>(set.normalization.mean_u);
  w.put<double>(set.normalization.mean_v);
  w.put<double>(set.normalization.scale);
  for (std::size_t i = 0; i < set.motions.size(); ++i) {
    const Motion<Dim>& m = set.motions[i];
    require(m.joints() == set.joints, ErrorKind::ShapeMismatch, "record joint count mismatch");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.frames()));
    const double* p = m.points().data();
    for (Eigen::Index k = 0; k < m.points().size(); ++k) w.put<float>(static_cast<float>(p[k]));
    for (Eigen::Index n = 0; n < m.size(); ++n)
      w.put<float>(set.confidences.empty() ? 1.0f : static_cast<float>(set.confidences[i](n)));
  }
  return std::move(w.bytes());
}

template <int Dim>
MotionSet<Dim> decode_motion_set(const std::vector<char>& bytes) {
  io::ByteReader r(bytes.data(), bytes.size());
  if (bytes.size() < kMotionMagic.size() || r.get_bytes(kMotionMagic.size()) != kMotionMagic)
    fail(ErrorKind::CorruptChecksum, "not a motion file (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kMotionFormatVersion)
    fail(ErrorKind::VersionMismatch, "unsupported motion file version " + std::to_string(version));
  const auto dims = r.get<std::uint32_t>();
  if (dims != static_cast<std::uint32_t>(Dim))
    fail(ErrorKind::ShapeMismatch, "expected " + std::to_string(Dim) + "D motions, file holds " +
                                       std::to_string(dims) + "D");
  MotionSet<Dim> set;
  set.joints = static_cast<int>(r.get<std::uint32_t>());
  set.fps = r.get<double>();
  const auto count = r.get<std::uint64_t>();
  set.normalization.mean_u = r.get<double>();
  set.normalization.mean_v = r.get<double>();
  set.normalization.scale = r.get<double>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const int frames = static_cast<int>(r.get<std::uint32_t>());
    require(frames >= 1, ErrorKind::CorruptChecksum, "record with zero frames");
    Motion<Dim> m(frames, set.joints);
    double* p = m.points().data();
    for (Eigen::Index k = 0; k < m.points().size(); ++k) p[k] = static_cast<double>(r.get<float>());
    Eigen::VectorXd conf(m.size());
    for (Eigen::Index n = 0; n < m.size(); ++n) conf(n) = static_cast<double>(r.get<float>());
    set.motions.push_back(std::move(m));
    set.confidences.push_back(std::move(conf));
  }
  if (r.remaining() != 0) fail(ErrorKind::CorruptChecksum, "trailing bytes after last record");
  return set;
}

template <int Dim>
void write_motion_set(const std::filesystem::path& path, const MotionSet<Dim>& set) {
  io::write_file(path, encode_motion_set(set));
}

template <int Dim>
MotionSet<Dim> read_motion_set(const std::filesystem::path& path) {
  return decode_motion_set<Dim>(io::read_file(path));
}

/// Lossless text form for debugging: coordinates as nested [frame][joint][axis].
template <int Dim>
nlohmann::json to_json(const MotionSet<Dim>& set) {
  nlohmann::json j;
  j["dims"] = Dim;
  j["joints"] = set.joints;
  j["fps"] = set.fps;
  j["normalization"] = {{"mean_u", set.normalization.mean_u},
                        {"mean_v", set.normalization.mean_v},
                        {"scale", set.normalization.scale}};
  j["records"] = nlohmann::json::array();
  for (std::size_t i = 0; i < set.motions.size(); ++i) {
    const auto& m = set.motions[i];
    nlohmann::json rec;
    rec["frames"] = m.frames();
    nlohmann::json frames = nlohmann::json::array();
    for (int l = 0; l < m.frames(); ++l) {
      nlohmann::json joints = nlohmann::json::array();
      for (int k = 0; k < m.joints(); ++k) {
        nlohmann::json pt = nlohmann::json::array();
        for (int a = 0; a < Dim; ++a) pt.push_back(m(l, k)(a));
        joints.push_back(std::move(pt));
      }
      frames.push_back(std::move(joints));
    }
    rec["positions"] = std::move(frames);
    if (!set.confidences.empty())
      rec["confidence"] = std::vector<double>(set.confidences[i].data(),
                                              set.confidences[i].data() + set.confidences[i].size());
    j["records"].push_back(std::move(rec));
  }
  return j;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

/// Human-readable key: value manifest (also valid YAML).
inline std::string manifest_text(const DatasetManifest& m) {
  std::ostringstream os;
  auto kv = [&](const std::string& k, const std::string& v) { os << k << ": " << v << "\n"; };
  kv("format_version", std::to_string(m.format_version));
  kv("record_count", std::to_string(m.count));
  kv("joints", std::to_string(m.joints));
  kv("fps", format_double(m.fps));
  kv("normalization_mean_u", format_double(m.normalization.mean_u));
  kv("normalization_mean_v", format_double(m.normalization.mean_v));
  kv("normalization_scale", format_double(m.normalization.scale));
  kv("camera_yaw_min", format_double(m.cameras.yaw_min));
  kv("camera_yaw_max", format_double(m.cameras.yaw_max));
  kv("camera_pitch", format_double(m.cameras.pitch));
  kv("camera_distance", format_double(m.cameras.distance));
  kv("camera_focal", format_double(m.cameras.focal));
  kv("family", to_string(m.family.family));
  kv("amplitude_min", format_double(m.family.amplitude_min));
  kv("amplitude_max", format_double(m.family.amplitude_max));
  kv("frequency_min", format_double(m.family.frequency_min));
  kv("frequency_max", format_double(m.family.frequency_max));
  kv("length_min", std::to_string(m.family.length_min));
  kv("length_max", std::to_string(m.family.length_max));
  kv("noise_sigma", format_double(m.noise_sigma));
  kv("dropout_prob", format_double(m.dropout_prob));
  kv("generator_seed", std::to_string(m.seed));
  return os.str();
}

inline MotionSet<2> records_as_motion_set(const Dataset& ds) {
  MotionSet<2> set;
  set.joints = ds.manifest.joints;
  set.fps = ds.manifest.fps;
  set.normalization = ds.manifest.normalization;
  for (const auto& r : ds.records) {
    set.motions.push_back(r.uv);
    set.confidences.push_back(r.confidence);
  }
  return set;
}

inline MotionSet<3> ground_truth_as_motion_set(const Dataset& ds) {
  MotionSet<3> set;
  set.joints = ds.manifest.joints;
  set.fps = ds.manifest.fps;
  set.motions = ds.ground_truth;
  return set;
}

}  // namespace mas
