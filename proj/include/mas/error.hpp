#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mas {

/// Failure classes raised by the library. The CLI maps each class to its own
/// exit code, so keep the enumerators stable.
enum class ErrorKind {
  NonPositiveDepth,
  BadRing,
  ConventionViolation,
  InvalidCamera,
  StepOutOfRange,
  EmptyBatch,
  BadArchitecture,
  ShapeMismatch,
  DataEmpty,
  NonFiniteLoss,
  Io,
  VersionMismatch,
  CorruptChecksum,
  DivergedTriangulation,
  DegenerateGeometry,
  NonFiniteState,
  MissingTrace,
  BadFamily,
  TooShort,
  InsufficientSamples,
  BadConfig,
  InvalidArgument,
};

inline constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorKind::BadRing: return "BadRing";
    case ErrorKind::ConventionViolation: return "ConventionViolation";
    case ErrorKind::InvalidCamera: return "InvalidCamera";
    case ErrorKind::StepOutOfRange: return "StepOutOfRange";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::BadArchitecture: return "BadArchitecture";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DataEmpty: return "DataEmpty";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::Io: return "Io";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::CorruptChecksum: return "CorruptChecksum";
    case ErrorKind::DivergedTriangulation: return "DivergedTriangulation";
    case ErrorKind::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorKind::NonFiniteState: return "NonFiniteState";
    case ErrorKind::MissingTrace: return "MissingTrace";
    case ErrorKind::BadFamily: return "BadFamily";
    case ErrorKind::TooShort: return "TooShort";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::BadConfig: return "BadConfig";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace mas
