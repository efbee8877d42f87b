#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "lotus/client.hpp"
#include "lotus/error.hpp"
#include "lotus/server.hpp"

using namespace lotus;
using namespace std::chrono_literals;
using nlohmann::json;

namespace {

class ServerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    ServerConfig cfg;
    cfg.host = "127.0.0.1";
    cfg.port = 0;
    cfg.mgmt_port = 0;
    cfg.log_level = "warn";
    server_ = std::make_unique<Server>(cfg);
    server_->start();
  }
  void TearDown() override { server_->stop(); }

  std::unique_ptr<Client> client(const std::string& id, std::optional<Location> loc = Location{0, 0}) {
    auto c = std::make_unique<Client>("127.0.0.1", server_->port());
    c->connect(id, loc);
    return c;
  }

  httplib::Client http() { return httplib::Client("127.0.0.1", server_->mgmt_port()); }

  std::unique_ptr<Server> server_;
};

template <typename T>
T expect_frame(Client& c, std::chrono::milliseconds timeout = 2000ms) {
  auto f = c.next(timeout);
  EXPECT_TRUE(f.has_value()) << "no frame";
  if (!f) return T{};
  EXPECT_TRUE(std::holds_alternative<T>(*f)) << "got " << wire::frame_type(*f);
  if (!std::holds_alternative<T>(*f)) return T{};
  return std::get<T>(*f);
}

ErrorCode code_of(auto f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::InvalidArgument;
}

bool wait_until(auto pred, std::chrono::milliseconds limit = 2000ms) {
  auto deadline = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(5ms);
  }
  return pred();
}

}  // namespace

TEST_F(ServerTest, PublishSubscribeOverTcp) {
  auto sub = client("sub");
  auto pub = client("pub");
  sub->subscribe("room/+", Geofence::world());
  pub->publish("room/1", std::string("bin\0ary", 7), Geofence::world());
  auto d = expect_frame<wire::Delivery>(*sub);
  EXPECT_EQ(d.topic, "room/1");
  EXPECT_EQ(d.payload, std::string("bin\0ary", 7));
  EXPECT_EQ(d.pub_id.size(), 32u);
}

TEST_F(ServerTest, ErrorsAreReportedAndNonFatal) {
  auto c = client("c");
  EXPECT_EQ(code_of([&] { c->subscribe("a/#/b", Geofence::world()); }), ErrorCode::InvalidFilter);
  c->publish("$lotus/processed/x", "x", Geofence::world());
  EXPECT_EQ(expect_frame<wire::ErrorFrame>(*c).code, "ReservedTopic");
  c->send_raw("this is not json\n");
  EXPECT_EQ(expect_frame<wire::ErrorFrame>(*c).code, "DecodeError");
  c->send(wire::Unsubscribe{999});
  EXPECT_EQ(expect_frame<wire::ErrorFrame>(*c).code, "UnknownSubscription");
  c->send(wire::FUnsub{999});
  EXPECT_EQ(expect_frame<wire::ErrorFrame>(*c).code, "UnknownFunctionSubscription");
  EXPECT_NO_THROW(c->subscribe("still/alive", Geofence::world()));
}

TEST_F(ServerTest, ProtocolViolationClosesSession) {
  Client c("127.0.0.1", server_->port());
  c.publish("a", "x", Geofence::world());
  EXPECT_EQ(expect_frame<wire::ErrorFrame>(c).code, "ProtocolViolation");
  EXPECT_TRUE(wait_until([&] { return c.closed(); }));
}

TEST_F(ServerTest, ConnectTwiceIsAViolation) {
  auto c = client("c");
  c->send(wire::Connect{"c", {}});
  EXPECT_EQ(expect_frame<wire::ErrorFrame>(*c).code, "ProtocolViolation");
  EXPECT_TRUE(wait_until([&] { return c->closed(); }));
  EXPECT_TRUE(wait_until([&] { return !server_->broker().has_session("c"); }));
}

TEST_F(ServerTest, PublishWithoutLocationIsAViolation) {
  auto c = client("c", std::nullopt);
  c->publish("a", "x", Geofence::world());
  EXPECT_EQ(expect_frame<wire::ErrorFrame>(*c).code, "ProtocolViolation");
}

TEST_F(ServerTest, PingLocEnablesPublishAndDelivery) {
  auto sub = client("sub", std::nullopt);
  auto pub = client("pub");
  sub->subscribe("t", Geofence::world());
  auto fence = Geofence::circle({0, 0}, 1000);
  pub->publish("t", "before", fence);
  pub->subscribe("barrier", Geofence::world());  // replies are in request order
  sub->send(wire::PingLoc{{0, 0.001}});
  ASSERT_TRUE(wait_until([&] { return server_->broker().location_of("sub").has_value(); }));
  pub->publish("t", "after", fence);
  EXPECT_EQ(expect_frame<wire::Delivery>(*sub).payload, "after");
}

TEST_F(ServerTest, FunctionSubscriptionLifecycle) {
  auto a = client("a");
  auto b = client("b");
  auto pub = client("pub");
  json spec = {{"name", "hot"},
               {"executor",
                {{"kind", "builtin"},
                 {"builtin", "threshold_filter"},
                 {"config", {{"field", "t"}, {"op", ">"}, {"threshold", 30}}}}}};
  auto fa = a->function_subscribe("s/+", Geofence::world(), function_spec_from_json(spec));
  auto fb = b->function_subscribe("s/+", Geofence::world(), function_spec_from_json(spec));
  EXPECT_EQ(fa.derived_topic, fb.derived_topic);
  EXPECT_EQ(fa.derived_topic.rfind("$lotus/processed/", 0), 0u);
  ASSERT_EQ(server_->bridges().bridges().size(), 1u);

  pub->publish("s/1", R"({"t":10})", Geofence::world());
  pub->publish("s/1", R"({"t":40})", Geofence::world());
  for (auto* c : {a.get(), b.get()}) {
    auto d = expect_frame<wire::Delivery>(*c);
    EXPECT_EQ(d.payload, R"({"t":40})");
    EXPECT_EQ(d.topic, fa.derived_topic);
  }
  EXPECT_EQ(server_->bridges().totals().invocations, 2u);

  EXPECT_EQ(code_of([&] { a->function_subscribe("#", Geofence::world(), FunctionId{"hot"}); }),
            ErrorCode::InvalidFilter);
  b->send(wire::FUnsub{fa.fsub_id});  // not b's
  EXPECT_EQ(expect_frame<wire::ErrorFrame>(*b).code, "UnknownFunctionSubscription");

  a->send(wire::FUnsub{fa.fsub_id});
  b->send(wire::FUnsub{fb.fsub_id});
  ASSERT_TRUE(wait_until([&] { return server_->bridges().bridges().empty(); }));
  EXPECT_TRUE(server_->runtime().list().empty());
}

TEST_F(ServerTest, DisconnectCleansUp) {
  {
    auto c = client("gone");
    c->subscribe("a", Geofence::world());
    c->function_subscribe("b", Geofence::world(),
                          FunctionSpec{"f", BuiltinExecutor{IdentityConfig{}}});
    EXPECT_EQ(server_->broker().subscriptions().size(), 3u);
  }
  EXPECT_TRUE(wait_until([&] { return server_->broker().subscriptions().empty(); }));
  EXPECT_FALSE(server_->broker().has_session("gone"));
  EXPECT_TRUE(server_->bridges().bridges().empty());
}

TEST_F(ServerTest, DuplicateConnectEvictsOldSession) {
  auto first = client("dup");
  first->subscribe("a", Geofence::world());
  auto second = client("dup");
  EXPECT_TRUE(wait_until([&] { return first->closed(); }));
  EXPECT_TRUE(server_->broker().has_session("dup"));
  EXPECT_TRUE(server_->broker().subscriptions().empty());
  second->subscribe("a", Geofence::world());
  auto pub = client("pub");
  pub->publish("a", "x", Geofence::world());
  EXPECT_EQ(expect_frame<wire::Delivery>(*second).payload, "x");
  // The evicted connection going away must not close the new session.
  first.reset();
  std::this_thread::sleep_for(50ms);
  EXPECT_TRUE(server_->broker().has_session("dup"));
}

TEST_F(ServerTest, RepliesFollowRequestOrder) {
  auto c = client("c");
  for (int i = 0; i < 200; ++i) {
    c->send(wire::Subscribe{i % 3 == 0 ? "a/#/b" : "t/" + std::to_string(i), Geofence::world()});
  }
  std::uint64_t last = 0;
  for (int i = 0; i < 200; ++i) {
    auto f = c->next(2000ms);
    ASSERT_TRUE(f);
    if (i % 3 == 0) {
      EXPECT_TRUE(std::holds_alternative<wire::ErrorFrame>(*f)) << i;
    } else {
      ASSERT_TRUE(std::holds_alternative<wire::SubAck>(*f)) << i;
      EXPECT_GT(std::get<wire::SubAck>(*f).sub_id, last);
      last = std::get<wire::SubAck>(*f).sub_id;
    }
  }
}

TEST_F(ServerTest, TwoHundredConcurrentSessions) {
  std::vector<std::unique_ptr<Client>> subs;
  for (int i = 0; i < 200; ++i) {
    subs.push_back(client("s" + std::to_string(i)));
    subs.back()->subscribe("all", Geofence::world());
  }
  auto pub = client("pub");
  pub->publish("all", "hi", Geofence::world());
  for (auto& s : subs) EXPECT_EQ(expect_frame<wire::Delivery>(*s).payload, "hi");
}

TEST_F(ServerTest, ManagementApi) {
  auto h = http();
  auto list = h.Get("/functions");
  ASSERT_TRUE(list);
  EXPECT_EQ(list->status, 200);
  EXPECT_EQ(json::parse(list->body), json::array());

  json spec = {{"name", "id"}, {"executor", {{"kind", "builtin"}, {"builtin", "identity"}}}};
  auto created = h.Post("/functions", spec.dump(), "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  EXPECT_EQ(json::parse(created->body)["function_id"], "id");

  auto dup = h.Post("/functions", spec.dump(), "application/json");
  EXPECT_EQ(dup->status, 409);
  EXPECT_EQ(json::parse(dup->body)["code"], "DuplicateName");
  auto bad = h.Post("/functions", "{", "application/json");
  EXPECT_EQ(bad->status, 400);
  auto invalid = h.Post("/functions", R"({"name":"x","executor":{"kind":"shell"}})", "application/json");
  EXPECT_EQ(invalid->status, 400);
  EXPECT_EQ(json::parse(invalid->body)["code"], "InvalidConfig");

  list = h.Get("/functions");
  auto arr = json::parse(list->body);
  ASSERT_EQ(arr.size(), 1u);
  EXPECT_EQ(function_spec_from_json(arr[0]), function_spec_from_json(spec));

  // A deployed function can be referenced by name over TCP.
  auto c = client("c");
  auto pub = client("pub");
  c->function_subscribe("m", Geofence::world(), FunctionId{"id"});
  pub->publish("m", "payload", Geofence::world());
  EXPECT_EQ(expect_frame<wire::Delivery>(*c).payload, "payload");

  auto stats = h.Get("/stats");
  ASSERT_TRUE(stats);
  auto st = json::parse(stats->body);
  EXPECT_EQ(st["totals"]["invocations"], 1);
  EXPECT_EQ(st["bridges"].size(), 1u);

  EXPECT_EQ(h.Delete("/functions/id")->status, 204);
  EXPECT_EQ(h.Delete("/functions/id")->status, 404);
  EXPECT_EQ(json::parse(h.Get("/functions")->body), json::array());
}

TEST_F(ServerTest, OversizedPayloadRejected) {
  auto c = client("c");
  c->publish("a", std::string(1024 * 1024 + 1, 'x'), Geofence::world());
  EXPECT_EQ(expect_frame<wire::ErrorFrame>(*c).code, "PayloadTooLarge");
}

TEST(ServerConfigTest, EnvironmentThenFile) {
  auto path = std::filesystem::temp_directory_path() / ("lotus-cfg-" + std::to_string(::getpid()) + ".toml");
  std::ofstream(path) << "# broker settings\n[server]\nport = 7000\nmax_payload = 2048 # bytes\nlog = \"debug\"\n";
  ::setenv("LOTUS_PORT", "6000", 1);
  ::setenv("LOTUS_MGMT_PORT", "6001", 1);
  auto env_only = load_server_config(std::nullopt);
  EXPECT_EQ(env_only.port, 6000);
  EXPECT_EQ(env_only.mgmt_port, 6001);
  auto both = load_server_config(path.string());
  EXPECT_EQ(both.port, 7000);
  EXPECT_EQ(both.mgmt_port, 6001);
  EXPECT_EQ(both.max_payload, 2048u);
  EXPECT_EQ(both.log_level, "debug");
  ::unsetenv("LOTUS_PORT");
  ::unsetenv("LOTUS_MGMT_PORT");

  std::ofstream(path) << "port = lots\n";
  EXPECT_EQ(code_of([&] { load_server_config(path.string()); }), ErrorCode::InvalidConfig);
  std::ofstream(path) << "colour = blue\n";
  EXPECT_EQ(code_of([&] { load_server_config(path.string()); }), ErrorCode::InvalidConfig);
  std::filesystem::remove(path);
  EXPECT_EQ(code_of([&] { load_server_config(path.string()); }), ErrorCode::InvalidConfig);
}

TEST(ClientTest, UnreachableBroker) {
  EXPECT_EQ(code_of([] { Client c("127.0.0.1", 1); }), ErrorCode::BrokerUnreachable);
}
