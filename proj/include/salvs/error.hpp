#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace salvs {

enum class ErrorCode {
  DegeneratePoint,
  CoincidentPoints,
  EmptyMask,
  PolicyMismatch,
  UnsupportedFormat,
  MalformedFile,
  ProbeFailed,
  SingularSystem,
  BehindCamera,
  NotVisible,
  SchemaError,
  ShapeMismatch,
  EmptyDataset,
  UnpairedFiles,
  UnknownScenario,
  UnknownSession,
  IllegalCommand,
  InvalidArgument,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegeneratePoint: return "DegeneratePoint";
    case ErrorCode::CoincidentPoints: return "CoincidentPoints";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::PolicyMismatch: return "PolicyMismatch";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::ProbeFailed: return "ProbeFailed";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::NotVisible: return "NotVisible";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::UnpairedFiles: return "UnpairedFiles";
    case ErrorCode::UnknownScenario: return "UnknownScenario";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::IllegalCommand: return "IllegalCommand";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the service layer) can map it to a structured response.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace salvs
