#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lotus {

enum class ErrorCode {
  InvalidArgument,
  InvalidFilter,
  InvalidTopic,
  InvalidFence,
  UnknownClient,
  UnknownSubscription,
  PublisherLocationUnknown,
  ReservedTopic,
  PayloadTooLarge,
  DuplicateName,
  InvalidConfig,
  UnknownFunction,
  UnknownFunctionSubscription,
  DecodeError,
  ProtocolViolation,
  EmptySamples,
  BrokerUnreachable,
  QuiescenceTimeout,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidFilter: return "InvalidFilter";
    case ErrorCode::InvalidTopic: return "InvalidTopic";
    case ErrorCode::InvalidFence: return "InvalidFence";
    case ErrorCode::UnknownClient: return "UnknownClient";
    case ErrorCode::UnknownSubscription: return "UnknownSubscription";
    case ErrorCode::PublisherLocationUnknown: return "PublisherLocationUnknown";
    case ErrorCode::ReservedTopic: return "ReservedTopic";
    case ErrorCode::PayloadTooLarge: return "PayloadTooLarge";
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnknownFunction: return "UnknownFunction";
    case ErrorCode::UnknownFunctionSubscription: return "UnknownFunctionSubscription";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::ProtocolViolation: return "ProtocolViolation";
    case ErrorCode::EmptySamples: return "EmptySamples";
    case ErrorCode::BrokerUnreachable: return "BrokerUnreachable";
    case ErrorCode::QuiescenceTimeout: return "QuiescenceTimeout";
  }
  return "Unknown";
}

constexpr std::optional<ErrorCode> error_code_from_string(std::string_view text) noexcept {
  for (int i = 0; i <= static_cast<int>(ErrorCode::QuiescenceTimeout); ++i) {
    auto code = static_cast<ErrorCode>(i);
    if (to_string(code) == text) return code;
  }
  return std::nullopt;
}

/// Every recoverable failure in the library is reported as an Error carrying
/// a stable code; the wire layer forwards the code verbatim in ERROR frames.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace lotus
