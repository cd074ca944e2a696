#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hand3d {

enum class ErrorCode {
  DegenerateBone,
  DegenerateAlignment,
  NotARotation,
  JointLimitViolation,
  BehindCamera,
  NoVisibleKeypoints,
  ShapeMismatch,
  LabelOutOfRange,
  EmptyMask,
  DegenerateSpan,
  InvalidConfig,
  ArchMismatch,
  UnsupportedVersion,
  SchemaViolation,
  NumericDivergence,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateBone: return "DegenerateBone";
    case ErrorCode::DegenerateAlignment: return "DegenerateAlignment";
    case ErrorCode::NotARotation: return "NotARotation";
    case ErrorCode::JointLimitViolation: return "JointLimitViolation";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::NoVisibleKeypoints: return "NoVisibleKeypoints";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::DegenerateSpan: return "DegenerateSpan";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ArchMismatch: return "ArchMismatch";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::NumericDivergence: return "NumericDivergence";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hand3d
