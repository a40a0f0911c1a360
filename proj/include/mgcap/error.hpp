#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mgcap {

enum class ErrorKind {
  DimensionMismatch,
  ShapeMismatch,
  NonFinite,
  NotSymmetric,
  NonConvergence,
  MalformedHeader,
  UnexpectedEof,
  UnsupportedMaxval,
  CropOutOfBounds,
  RatioOutOfRange,
  EmptyDataset,
  LabelOutOfRange,
  IoError,
  ConfigError,
  CheckpointMismatch,
  CorruptCheckpoint,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::NotSymmetric: return "NotSymmetric";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::UnexpectedEof: return "UnexpectedEof";
    case ErrorKind::UnsupportedMaxval: return "UnsupportedMaxval";
    case ErrorKind::CropOutOfBounds: return "CropOutOfBounds";
    case ErrorKind::RatioOutOfRange: return "RatioOutOfRange";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::CheckpointMismatch: return "CheckpointMismatch";
    case ErrorKind::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Single exception type for the library; `kind()` distinguishes failure classes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), detail_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// The message without the kind prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

}  // namespace mgcap
