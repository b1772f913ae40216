#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace svllm {

/// Failure categories raised across the library. The CLI maps each category
/// to a process exit code (see exit_code_for).
enum class ErrorKind {
  // input / data errors
  InvalidCoordinate,
  EmptyInput,
  DuplicateId,
  InvalidFractions,
  TooFewValues,
  NonFinite,
  LengthMismatch,
  ZeroVariance,
  EmptyTraining,
  KTooLarge,
  TooFewSamples,
  DegenerateFeatures,
  SchemaError,
  UnknownSampleId,
  MissingScale,
  ParseError,
  InvalidSpec,
  MissingArtifact,
  // prompt contract
  CotDisabled,
  // providers / network
  ProviderError,
  FixtureMiss,
  GatewayError,
  TimeoutError,
  // configuration
  ConfigError,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// The message without the kind prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

/// 0 success, 2 config error, 3 provider error, 4 data error.
int exit_code_for(ErrorKind kind) noexcept;

}  // namespace svllm
