#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "mas/binary_io.hpp"
#include "mas/denoiser.hpp"

namespace mas {

// Layout (little-endian):
//   "MASCKPT\0"                          8 bytes
//   u32 version
//   u32 joints, hidden, mixing_layers, context_radius, time_embed_dim
//   u32 diffusion steps, u32 schedule fingerprint
//   f64 mean_u, mean_v, scale           normalizer
//   u64 train_step
//   u64 parameter count, then that many f32
//   u32 CRC-32 of every preceding byte
inline constexpr std::string_view kCheckpointMagic{"MASCKPT\0", 8};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<char> encode_checkpoint(const Denoiser& d) {
  io::ByteWriter w;
  w.put_bytes(kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  const Architecture& a = d.architecture();
  for (int v : {a.joints, a.hidden, a.mixing_layers, a.context_radius, a.time_embed_dim})
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d.diffusion_steps()));
  w.put<std::uint32_t>(d.schedule_fingerprint());
  w.put<double>(d.normalizer.mean_u);
  w.put<double>(d.normalizer.mean_v);
  w.put<double>(d.normalizer.scale);
  w.put<std::uint64_t>(d.train_step);
  w.put<std::uint64_t>(d.parameters().size());
  for (double p : d.parameters()) w.put<float>(static_cast<float>(p));
  const std::uint32_t crc = io::crc32_of(w.bytes().data(), w.bytes().size());
  w.put<std::uint32_t>(crc);
  return std::move(w.bytes());
}

inline Denoiser decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 8 ||
      std::string_view(bytes.data(), kCheckpointMagic.size()) != kCheckpointMagic)
    fail(ErrorKind::CorruptChecksum, "not a checkpoint file (bad magic)");
  const std::size_t body = bytes.size() - sizeof(std::uint32_t);
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  if (io::crc32_of(bytes.data(), body) != stored)
    fail(ErrorKind::CorruptChecksum, "checkpoint checksum mismatch");

  io::ByteReader r(bytes.data(), body);
  r.get_bytes(kCheckpointMagic.size());
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    fail(ErrorKind::VersionMismatch, "unsupported checkpoint version " + std::to_string(version));
  Architecture a;
  a.joints = static_cast<int>(r.get<std::uint32_t>());
  a.hidden = static_cast<int>(r.get<std::uint32_t>());
  a.mixing_layers = static_cast<int>(r.get<std::uint32_t>());
  a.context_radius = static_cast<int>(r.get<std::uint32_t>());
  a.time_embed_dim = static_cast<int>(r.get<std::uint32_t>());
  const int steps = static_cast<int>(r.get<std::uint32_t>());
  const auto fingerprint = r.get<std::uint32_t>();
  Normalizer norm;
  norm.mean_u = r.get<double>();
  norm.mean_v = r.get<double>();
  norm.scale = r.get<double>();
  const auto train_step = r.get<std::uint64_t>();
  const auto count = r.get<std::uint64_t>();
  if (count != r.remaining() / sizeof(float) || r.remaining() % sizeof(float) != 0)
    fail(ErrorKind::CorruptChecksum, "parameter block has the wrong length");
  std::vector<double> params(count);
  for (auto& p : params) p = static_cast<double>(r.get<float>());
  Denoiser d(a, steps, fingerprint, std::move(params));
  d.normalizer = norm;
  d.train_step = train_step;
  return d;
}

inline void save_checkpoint(const Denoiser& d, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(d));
}

/// Loads a checkpoint; when `expected` is given, the stored schedule
/// fingerprint must match it.
inline Denoiser load_checkpoint(const std::filesystem::path& path,
                                const NoiseSchedule* expected = nullptr) {
  Denoiser d = decode_checkpoint(io::read_file(path));
  if (expected && (expected->fingerprint() != d.schedule_fingerprint() ||
                   expected->steps() != d.diffusion_steps()))
    fail(ErrorKind::VersionMismatch,
         "checkpoint trained with " + std::to_string(d.diffusion_steps()) +
             " diffusion steps does not match a " + std::to_string(expected->steps()) +
             "-step schedule");
  return d;
}

}  // namespace mas
