#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lotus/bridge.hpp"
#include "lotus/codec.hpp"
#include "lotus/geo.hpp"

namespace lotus::wire {

inline constexpr std::uint16_t kDefaultPort = 5789;
inline constexpr std::uint16_t kDefaultMgmtPort = 8790;

// Topics and filters travel as text and are validated when the session acts
// on them, so a bad filter yields ERROR{InvalidFilter} instead of a decode
// failure.

struct Connect {
  std::string client_id;
  std::optional<Location> location;
  friend bool operator==(const Connect&, const Connect&) = default;
};
struct ConnAck {
  friend bool operator==(const ConnAck&, const ConnAck&) = default;
};
struct PingLoc {
  Location location;
  friend bool operator==(const PingLoc&, const PingLoc&) = default;
};
struct Subscribe {
  std::string filter;
  Geofence fence;
  friend bool operator==(const Subscribe&, const Subscribe&) = default;
};
struct SubAck {
  std::uint64_t sub_id = 0;
  friend bool operator==(const SubAck&, const SubAck&) = default;
};
struct Unsubscribe {
  std::uint64_t sub_id = 0;
  friend bool operator==(const Unsubscribe&, const Unsubscribe&) = default;
};
struct Publish {
  std::string topic;
  Bytes payload;
  Geofence fence;
  friend bool operator==(const Publish&, const Publish&) = default;
};
struct Delivery {
  std::string topic;
  Bytes payload;
  std::string pub_id;
  std::int64_t ts = 0;
  friend bool operator==(const Delivery&, const Delivery&) = default;
};
struct FSub {
  std::string filter;
  Geofence fence;
  FunctionRef function;
  friend bool operator==(const FSub&, const FSub&) = default;
};
struct FSubAck {
  std::uint64_t fsub_id = 0;
  std::string derived_topic;
  friend bool operator==(const FSubAck&, const FSubAck&) = default;
};
struct FUnsub {
  std::uint64_t fsub_id = 0;
  friend bool operator==(const FUnsub&, const FUnsub&) = default;
};
struct ErrorFrame {
  std::string code;
  std::string detail;
  friend bool operator==(const ErrorFrame&, const ErrorFrame&) = default;
};

using Frame = std::variant<Connect, ConnAck, PingLoc, Subscribe, SubAck, Unsubscribe, Publish, Delivery, FSub,
                           FSubAck, FUnsub, ErrorFrame>;

std::string_view frame_type(const Frame& frame) noexcept;

/// Parses one line (with or without the trailing newline). Unknown fields are
/// ignored. Throws Error{DecodeError} naming the first violated rule.
Frame decode_frame(std::string_view line);
/// One line of JSON with lexicographically ordered keys, "\n"-terminated.
std::string encode_frame(const Frame& frame);

nlohmann::json fence_to_json(const Geofence& fence);
/// Throws Error{DecodeError}.
Geofence fence_from_json(const nlohmann::json& j);

}  // namespace lotus::wire
