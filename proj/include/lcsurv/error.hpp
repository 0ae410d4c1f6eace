#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lcsurv {

/// Error categories raised across the library. The CLI maps each category to
/// an exit code (see error_category()).
enum class ErrorKind {
  // data / input
  MissingColumn,
  NonNumericCell,
  NegativeTime,
  EventNotBinary,
  EmptyFile,
  MissingArtifacts,
  // arguments / configuration
  InvalidArgument,
  KTooLarge,
  // numerical / fitting
  NoEvents,
  NonFiniteValue,
  SingularHessian,
  SeparationDetected,
  DegenerateRecord,
  AllStartsFailed,
  FoldDegenerate,
  NoCases,
  NoControls,
  CyclicGraph,
  NotPositiveDefinite,
  CalibrationFailed,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::NonNumericCell: return "NonNumericCell";
    case ErrorKind::NegativeTime: return "NegativeTime";
    case ErrorKind::EventNotBinary: return "EventNotBinary";
    case ErrorKind::EmptyFile: return "EmptyFile";
    case ErrorKind::MissingArtifacts: return "MissingArtifacts";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::KTooLarge: return "KTooLarge";
    case ErrorKind::NoEvents: return "NoEvents";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::SingularHessian: return "SingularHessian";
    case ErrorKind::SeparationDetected: return "SeparationDetected";
    case ErrorKind::DegenerateRecord: return "DegenerateRecord";
    case ErrorKind::AllStartsFailed: return "AllStartsFailed";
    case ErrorKind::FoldDegenerate: return "FoldDegenerate";
    case ErrorKind::NoCases: return "NoCases";
    case ErrorKind::NoControls: return "NoControls";
    case ErrorKind::CyclicGraph: return "CyclicGraph";
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::CalibrationFailed: return "CalibrationFailed";
  }
  return "Unknown";
}

enum class ErrorCategory { Config, Data, Fit };

inline ErrorCategory error_category(ErrorKind k) {
  switch (k) {
    case ErrorKind::MissingColumn:
    case ErrorKind::NonNumericCell:
    case ErrorKind::NegativeTime:
    case ErrorKind::EventNotBinary:
    case ErrorKind::EmptyFile:
    case ErrorKind::NoEvents:
    case ErrorKind::MissingArtifacts:
      return ErrorCategory::Data;
    case ErrorKind::InvalidArgument:
    case ErrorKind::KTooLarge:
    case ErrorKind::CyclicGraph:
    case ErrorKind::NotPositiveDefinite:
      return ErrorCategory::Config;
    default:
      return ErrorCategory::Fit;
  }
}

inline std::string_view to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return "config";
    case ErrorCategory::Data: return "data";
    case ErrorCategory::Fit: return "fit";
  }
  return "unknown";
}

/// Process exit status for each category: 2 config, 3 data, 4 fit.
inline int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::Data: return 3;
    case ErrorCategory::Fit: return 4;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace lcsurv
