#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sof {

enum class ErrorCode {
  DegenerateLandmarks,
  InvalidArgument,
  ShapeMismatch,
  NumericalUnderflow,
  UnknownPerson,
  InsufficientIdentities,
  NonFiniteGradient,
  DegeneratePairs,
  Unattainable,
  StaleSnapshot,
  CorruptSnapshot,
  SeriesTooSmall,
  DuplicateSeries,
  AlertNotFound,
  AlertNotPending,
  UnknownDevice,
  NoSuchVersion,
  CorruptCorpus,
  ServerUnreachable,
  ScenarioError,
  ProtocolError,
  IoFailure,
  ParseError,
};

inline constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DegenerateLandmarks: return "DegenerateLandmarks";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NumericalUnderflow: return "NumericalUnderflow";
    case ErrorCode::UnknownPerson: return "UnknownPerson";
    case ErrorCode::InsufficientIdentities: return "InsufficientIdentities";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::DegeneratePairs: return "DegeneratePairs";
    case ErrorCode::Unattainable: return "Unattainable";
    case ErrorCode::StaleSnapshot: return "StaleSnapshot";
    case ErrorCode::CorruptSnapshot: return "CorruptSnapshot";
    case ErrorCode::SeriesTooSmall: return "SeriesTooSmall";
    case ErrorCode::DuplicateSeries: return "DuplicateSeries";
    case ErrorCode::AlertNotFound: return "AlertNotFound";
    case ErrorCode::AlertNotPending: return "AlertNotPending";
    case ErrorCode::UnknownDevice: return "UnknownDevice";
    case ErrorCode::NoSuchVersion: return "NoSuchVersion";
    case ErrorCode::CorruptCorpus: return "CorruptCorpus";
    case ErrorCode::ServerUnreachable: return "ServerUnreachable";
    case ErrorCode::ScenarioError: return "ScenarioError";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (the hub's job runner, the HTTP layer) can map it without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace sof
