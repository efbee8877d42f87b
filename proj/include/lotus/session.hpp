#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "lotus/protocol.hpp"

namespace lotus::wire {

enum class Phase { Fresh, Connected, Closed };

struct SessionState {
  Phase phase = Phase::Fresh;
  std::string client_id;
  bool has_location = false;
  friend bool operator==(const SessionState&, const SessionState&) = default;
};

namespace action {
struct Connect {
  std::string client_id;
  std::optional<Location> location;
  friend bool operator==(const Connect&, const Connect&) = default;
};
struct UpdateLocation {
  Location location;
  friend bool operator==(const UpdateLocation&, const UpdateLocation&) = default;
};
struct Subscribe {
  std::string filter;
  Geofence fence;
  friend bool operator==(const Subscribe&, const Subscribe&) = default;
};
struct Unsubscribe {
  std::uint64_t sub_id;
  friend bool operator==(const Unsubscribe&, const Unsubscribe&) = default;
};
struct Publish {
  std::string topic;
  Bytes payload;
  Geofence fence;
  friend bool operator==(const Publish&, const Publish&) = default;
};
struct FunctionSubscribe {
  std::string filter;
  Geofence fence;
  FunctionRef function;
  friend bool operator==(const FunctionSubscribe&, const FunctionSubscribe&) = default;
};
struct FunctionUnsubscribe {
  std::uint64_t fsub_id;
  friend bool operator==(const FunctionUnsubscribe&, const FunctionUnsubscribe&) = default;
};
struct Reply {
  Frame frame;
  friend bool operator==(const Reply&, const Reply&) = default;
};
struct Close {
  friend bool operator==(const Close&, const Close&) = default;
};
}  // namespace action

/// Broker/bridge calls carry their own reply: the executor answers SUBSCRIBE
/// with SUBACK, FSUB with FSUBACK, and any failed call with ERROR.
using Action = std::variant<action::Connect, action::UpdateLocation, action::Subscribe, action::Unsubscribe,
                            action::Publish, action::FunctionSubscribe, action::FunctionUnsubscribe, action::Reply,
                            action::Close>;

struct StepResult {
  SessionState state;
  std::vector<Action> actions;
};

/// Pure protocol transition. A violation yields ERROR{ProtocolViolation} and
/// Close, and a closed session ignores everything afterwards.
StepResult session_step(const SessionState& state, const Frame& frame);

}  // namespace lotus::wire
