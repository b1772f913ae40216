#include "svllm/error.hpp"

namespace svllm {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidCoordinate: return "InvalidCoordinate";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::InvalidFractions: return "InvalidFractions";
    case ErrorKind::TooFewValues: return "TooFewValues";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::EmptyTraining: return "EmptyTraining";
    case ErrorKind::KTooLarge: return "KTooLarge";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::DegenerateFeatures: return "DegenerateFeatures";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::UnknownSampleId: return "UnknownSampleId";
    case ErrorKind::MissingScale: return "MissingScale";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::MissingArtifact: return "MissingArtifact";
    case ErrorKind::CotDisabled: return "CotDisabled";
    case ErrorKind::ProviderError: return "ProviderError";
    case ErrorKind::FixtureMiss: return "FixtureMiss";
    case ErrorKind::GatewayError: return "GatewayError";
    case ErrorKind::TimeoutError: return "TimeoutError";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::InvalidFractions:
    case ErrorKind::InvalidSpec:
      return 2;
    case ErrorKind::ProviderError:
    case ErrorKind::FixtureMiss:
    case ErrorKind::GatewayError:
    case ErrorKind::TimeoutError:
      return 3;
    default:
      return 4;
  }
}

}  // namespace svllm
