#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace udab {

enum class ErrorCode {
  kInsufficientData,
  kEmptyInput,
  kEmptySubset,
  kTooFewClasses,
  kUnknownArchitecture,
  kShape,
  kEmptyBatch,
  kNumeric,
  kConfiguration,
  kPrecondition,
  kUnknownMethod,
  kAbortedRun,
  kRange,
  kEmptyPretext,
  kTooSmallBatch,
  kDivisionDomain,
  kEmptyAxis,
  kEmptyReport,
  kIo,
};

std::string_view to_string(ErrorCode code);

/// Base exception for every failure raised by the library. The code is the
/// stable, testable part; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// A training run hit a non-finite loss.
class AbortedRun : public Error {
 public:
  AbortedRun(std::int64_t step, const std::string& message)
      : Error(ErrorCode::kAbortedRun, "step " + std::to_string(step) + ": " + message), step_(step) {}

  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

/// Configuration problem tied to a key path such as `method.params.margin`.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error(ErrorCode::kConfiguration, key + ": " + message), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInsufficientData: return "insufficient-data";
    case ErrorCode::kEmptyInput: return "empty-input";
    case ErrorCode::kEmptySubset: return "empty-subset";
    case ErrorCode::kTooFewClasses: return "too-few-classes";
    case ErrorCode::kUnknownArchitecture: return "unknown-architecture";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kEmptyBatch: return "empty-batch";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kConfiguration: return "configuration";
    case ErrorCode::kPrecondition: return "precondition";
    case ErrorCode::kUnknownMethod: return "unknown-method";
    case ErrorCode::kAbortedRun: return "aborted-run";
    case ErrorCode::kRange: return "range";
    case ErrorCode::kEmptyPretext: return "empty-pretext";
    case ErrorCode::kTooSmallBatch: return "too-small-batch";
    case ErrorCode::kDivisionDomain: return "division-domain";
    case ErrorCode::kEmptyAxis: return "empty-axis";
    case ErrorCode::kEmptyReport: return "empty-report";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace udab
