#include <gtest/gtest.h>

#include "generators.hpp"
#include "lotus/session.hpp"

using namespace lotus;
using namespace lotus::wire;

namespace {

bool is_violation(const StepResult& r) {
  if (r.actions.size() != 2 || r.state.phase != Phase::Closed) return false;
  const auto* reply = std::get_if<action::Reply>(&r.actions[0]);
  if (!reply) return false;
  const auto* err = std::get_if<ErrorFrame>(&reply->frame);
  return err && err->code == "ProtocolViolation" && std::holds_alternative<action::Close>(r.actions[1]);
}

SessionState connected(bool located = true) { return {Phase::Connected, "c", located}; }

}  // namespace

TEST(Session, PublishBeforeConnect) {
  EXPECT_TRUE(is_violation(session_step({}, Publish{"a", "x", Geofence::world()})));
}

TEST(Session, Connect) {
  auto r = session_step({}, Connect{"c1", Location{1, 2}});
  EXPECT_EQ(r.state, (SessionState{Phase::Connected, "c1", true}));
  ASSERT_EQ(r.actions.size(), 2u);
  EXPECT_EQ(r.actions[0], Action(action::Connect{"c1", Location{1, 2}}));
  EXPECT_EQ(r.actions[1], Action(action::Reply{ConnAck{}}));
}

TEST(Session, FunctionSubscribe) {
  FSub f{"a/+", Geofence::world(), FunctionId{"f"}};
  auto r = session_step(connected(), f);
  ASSERT_EQ(r.actions.size(), 1u);
  EXPECT_EQ(r.actions[0], Action(action::FunctionSubscribe{"a/+", Geofence::world(), FunctionId{"f"}}));
}

TEST(Session, ConnectAfterConnect) { EXPECT_TRUE(is_violation(session_step(connected(), Connect{"c", {}}))); }

TEST(Session, PublishNeedsLocation) {
  auto s = session_step({}, Connect{"c", std::nullopt}).state;
  EXPECT_TRUE(is_violation(session_step(s, Publish{"a", "x", Geofence::world()})));
  s = session_step(s, PingLoc{{1, 1}}).state;
  auto r = session_step(s, Publish{"a", "x", Geofence::world()});
  ASSERT_EQ(r.actions.size(), 1u);
  EXPECT_TRUE(std::holds_alternative<action::Publish>(r.actions[0]));
}

TEST(Session, ServerFramesFromClientAreViolations) {
  for (const Frame& f : {Frame(ConnAck{}), Frame(SubAck{1}), Frame(Delivery{}), Frame(FSubAck{}), Frame(ErrorFrame{})}) {
    EXPECT_TRUE(is_violation(session_step(connected(), f))) << frame_type(f);
  }
}

TEST(Session, ClosedIgnoresEverything) {
  SessionState closed{Phase::Closed, "c", true};
  gen::FrameGen g(5);
  for (int i = 0; i < 200; ++i) {
    auto r = session_step(closed, g.frame());
    EXPECT_TRUE(r.actions.empty());
    EXPECT_EQ(r.state, closed);
  }
}

TEST(Session, GeneratedSequencesMatchReferenceModel) {
  gen::FrameGen g(2025);
  int mismatches = 0, rejected = 0;
  for (int n = 0; n < 2000; ++n) {
    std::vector<Frame> seq;
    // Bias the first frame toward CONNECT so longer legal prefixes occur.
    seq.push_back(g.rng()() % 3 ? g.frame_of_kind(0) : g.frame());
    auto len = 1 + g.rng()() % 8;
    for (std::size_t i = 0; i < len; ++i) {
      static const std::size_t client_kinds[] = {2, 3, 5, 6, 8, 10};
      seq.push_back(g.rng()() % 5 ? g.frame_of_kind(client_kinds[g.rng()() % 6]) : g.frame());
    }
    auto expected = gen::first_violation(seq);
    SessionState s;
    std::optional<std::size_t> actual;
    bool acted_after_close = false;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      auto r = session_step(s, seq[i]);
      if (actual && !r.actions.empty()) acted_after_close = true;
      if (!actual && is_violation(r)) actual = i;
      s = r.state;
    }
    if (expected != actual || acted_after_close) ++mismatches;
    if (expected) ++rejected;
  }
  EXPECT_EQ(mismatches, 0);
  EXPECT_GT(rejected, 500);
}
