#include "lotus/session.hpp"

#include "lotus/error.hpp"

namespace lotus::wire {
namespace {

StepResult violation(const SessionState& state, const std::string& detail) {
  SessionState next = state;
  next.phase = Phase::Closed;
  return {next,
          {action::Reply{ErrorFrame{std::string(to_string(ErrorCode::ProtocolViolation)), detail}}, action::Close{}}};
}

}  // namespace

StepResult session_step(const SessionState& state, const Frame& frame) {
  if (state.phase == Phase::Closed) return {state, {}};

  if (state.phase == Phase::Fresh) {
    const auto* connect = std::get_if<Connect>(&frame);
    if (!connect) return violation(state, std::string(frame_type(frame)) + " before CONNECT");
    SessionState next{Phase::Connected, connect->client_id, connect->location.has_value()};
    return {next, {action::Connect{connect->client_id, connect->location}, action::Reply{ConnAck{}}}};
  }

  struct Visitor {
    const SessionState& state;

    StepResult operator()(const Connect&) const { return violation(state, "CONNECT on a connected session"); }
    StepResult operator()(const PingLoc& f) const {
      SessionState next = state;
      next.has_location = true;
      return {next, {action::UpdateLocation{f.location}}};
    }
    StepResult operator()(const Subscribe& f) const { return {state, {action::Subscribe{f.filter, f.fence}}}; }
    StepResult operator()(const Unsubscribe& f) const { return {state, {action::Unsubscribe{f.sub_id}}}; }
    StepResult operator()(const Publish& f) const {
      if (!state.has_location) return violation(state, "PUBLISH before any location was supplied");
      return {state, {action::Publish{f.topic, f.payload, f.fence}}};
    }
    StepResult operator()(const FSub& f) const {
      return {state, {action::FunctionSubscribe{f.filter, f.fence, f.function}}};
    }
    StepResult operator()(const FUnsub& f) const { return {state, {action::FunctionUnsubscribe{f.fsub_id}}}; }

    // Broker-to-client frames are never valid from a client.
    StepResult operator()(const ConnAck&) const { return server_only("CONNACK"); }
    StepResult operator()(const SubAck&) const { return server_only("SUBACK"); }
    StepResult operator()(const Delivery&) const { return server_only("DELIVERY"); }
    StepResult operator()(const FSubAck&) const { return server_only("FSUBACK"); }
    StepResult operator()(const ErrorFrame&) const { return server_only("ERROR"); }

    StepResult server_only(const char* type) const { return violation(state, std::string(type) + " sent by a client"); }
  };
  return std::visit(Visitor{state}, frame);
}

}  // namespace lotus::wire
