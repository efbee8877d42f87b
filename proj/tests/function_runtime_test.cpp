#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <future>
#include <set>
#include <thread>

#include "lotus/error.hpp"
#include "lotus/function_runtime.hpp"

using namespace lotus;
using namespace std::chrono_literals;
using Clock = std::chrono::steady_clock;

namespace {

FunctionSpec builtin_spec(std::string name, BuiltinExecutor exec = IdentityConfig{}) {
  return FunctionSpec{std::move(name), std::move(exec)};
}

FunctionSpec process_spec(std::string name, std::vector<std::string> args, std::int64_t timeout_ms = 1000,
                          std::int64_t max_concurrency = 8) {
  args.insert(args.begin(), LOTUS_FN_FIXTURE);
  return FunctionSpec{std::move(name), ProcessExecutor{std::move(args), {}}, timeout_ms, max_concurrency};
}

Invocation inv(Bytes payload) { return Invocation{"id", "t", std::move(payload), Location{1, 2}, 3}; }

ErrorCode code_of(auto f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::InvalidArgument;
}

std::filesystem::path temp_file(const std::string& stem) {
  auto p = std::filesystem::temp_directory_path() /
           (stem + "-" + std::to_string(::getpid()) + "-" + std::to_string(Clock::now().time_since_epoch().count()));
  std::filesystem::remove(p);
  return p;
}

}  // namespace

TEST(Runtime, DeployIdentity) {
  FunctionRuntime rt;
  auto id = rt.deploy(builtin_spec("id"));
  EXPECT_EQ(rt.invoke(id, inv("x")), Outcome(Forward{"x"}));
}

TEST(Runtime, DuplicateNameAndRedeploy) {
  FunctionRuntime rt;
  rt.deploy(builtin_spec("f"));
  EXPECT_EQ(code_of([&] { rt.deploy(builtin_spec("f")); }), ErrorCode::DuplicateName);
  rt.remove(FunctionId{"f"});
  EXPECT_NO_THROW(rt.deploy(builtin_spec("f")));
}

TEST(Runtime, InvalidConfig) {
  FunctionRuntime rt;
  EXPECT_EQ(code_of([&] { rt.deploy(builtin_spec("")); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([&] { rt.deploy(builtin_spec("e", ExtractKeysConfig{})); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([&] { rt.deploy(builtin_spec("t", ThresholdConfig{"", Comparison::Greater, 1})); }),
            ErrorCode::InvalidConfig);
  auto bad_timeout = builtin_spec("x");
  bad_timeout.timeout_ms = 0;
  EXPECT_EQ(code_of([&] { rt.deploy(bad_timeout); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([&] { rt.deploy(FunctionSpec{"p", ProcessExecutor{}}); }), ErrorCode::InvalidConfig);
}

TEST(Runtime, Remove) {
  FunctionRuntime rt;
  auto id = rt.deploy(builtin_spec("f"));
  rt.remove(id);
  EXPECT_EQ(code_of([&] { rt.invoke(id, inv("x")); }), ErrorCode::UnknownFunction);
  EXPECT_EQ(code_of([&] { rt.remove(id); }), ErrorCode::UnknownFunction);
}

TEST(Runtime, List) {
  FunctionRuntime rt;
  EXPECT_TRUE(rt.list().empty());
  for (const char* n : {"a", "b", "c"}) rt.deploy(builtin_spec(n));
  auto names = [&] {
    std::set<std::string> out;
    for (const auto& s : rt.list()) out.insert(s.name);
    return out;
  };
  EXPECT_EQ(names(), (std::set<std::string>{"a", "b", "c"}));
  rt.remove(FunctionId{"b"});
  EXPECT_EQ(names(), (std::set<std::string>{"a", "c"}));
  EXPECT_EQ(rt.find(FunctionId{"a"})->name, "a");
  EXPECT_FALSE(rt.find(FunctionId{"b"}));
}

TEST(SpecJson, RoundTrip) {
  std::vector<FunctionSpec> specs{
      builtin_spec("i"),
      builtin_spec("t", ThresholdConfig{"temperature", Comparison::LessEqual, 2.5}),
      builtin_spec("c", JsonToCsvConfig{}),
      builtin_spec("e", ExtractKeysConfig{{"k0", "k1"}}),
      FunctionSpec{"p", ProcessExecutor{{"/bin/cat"}, {{"A", "1"}}}, 50, 2},
  };
  for (const auto& s : specs) EXPECT_EQ(function_spec_from_json(to_json(s)), s);
}

TEST(SpecJson, Defaults) {
  auto spec = function_spec_from_json(
      nlohmann::json::parse(R"({"name":"f","executor":{"kind":"builtin","builtin":"identity"}})"));
  EXPECT_EQ(spec.timeout_ms, 1000);
  EXPECT_EQ(spec.max_concurrency, 8);
}

TEST(SpecJson, Rejects) {
  for (const char* bad : {
           R"([])",
           R"({"executor":{"kind":"builtin","builtin":"identity"}})",
           R"({"name":"f","executor":{"kind":"builtin","builtin":"sort"}})",
           R"({"name":"f","executor":{"kind":"docker"}})",
           R"({"name":"f","executor":{"kind":"builtin","builtin":"threshold_filter","config":{"field":"t","op":"!=","threshold":1}}})",
           R"({"name":"f","executor":{"kind":"process","command":"ls"}})",
           R"({"name":"f","executor":{"kind":"builtin","builtin":"identity"},"timeout_ms":"1"})",
       }) {
    EXPECT_EQ(code_of([&] { function_spec_from_json(nlohmann::json::parse(bad)); }), ErrorCode::InvalidConfig) << bad;
  }
}

TEST(ExternalProcess, EchoAndDrop) {
  FunctionRuntime rt;
  auto echo = rt.deploy(process_spec("echo", {"echo"}));
  auto drop = rt.deploy(process_spec("drop", {"drop"}));
  auto upper = rt.deploy(process_spec("upper", {"upper"}));
  std::string binary("a\0b\n\xff", 5);
  EXPECT_EQ(rt.invoke(echo, inv(binary)), Outcome(Forward{binary}));
  EXPECT_EQ(rt.invoke(echo, inv("")), Outcome(Forward{""}));
  EXPECT_EQ(rt.invoke(drop, inv("x")), Outcome(Drop{}));
  EXPECT_EQ(rt.invoke(upper, inv("abc")), Outcome(Forward{"ABC"}));
}

TEST(ExternalProcess, TimeoutWithinBounds) {
  FunctionRuntime rt;
  auto id = rt.deploy(process_spec("silent", {"silent"}, 50));
  auto start = Clock::now();
  auto o = rt.invoke(id, inv("x"));
  auto elapsed = Clock::now() - start;
  ASSERT_TRUE(std::holds_alternative<Failure>(o));
  EXPECT_EQ(std::get<Failure>(o).reason, FailureReason::Timeout);
  EXPECT_GE(elapsed, 50ms);
  EXPECT_LT(elapsed, 250ms);
}

TEST(ExternalProcess, SleepingTenTimesTimeoutFailsWithinFiveTimes) {
  FunctionRuntime rt;
  auto id = rt.deploy(process_spec("sleepy", {"sleep", "500"}, 50));
  for (int i = 0; i < 3; ++i) {
    auto start = Clock::now();
    auto o = rt.invoke(id, inv("x"));
    ASSERT_TRUE(std::holds_alternative<Failure>(o));
    EXPECT_EQ(std::get<Failure>(o).reason, FailureReason::Timeout);
    EXPECT_LT(Clock::now() - start, 250ms);
  }
}

TEST(ExternalProcess, MalformedResponse) {
  FunctionRuntime rt;
  auto id = rt.deploy(process_spec("bad", {"malformed"}));
  auto o = rt.invoke(id, inv("x"));
  ASSERT_TRUE(std::holds_alternative<Failure>(o));
  EXPECT_EQ(std::get<Failure>(o).reason, FailureReason::MalformedResponse);
}

TEST(ExternalProcess, CrashThenLazyRestart) {
  FunctionRuntime rt;
  auto marker = temp_file("lotus-crash");
  auto id = rt.deploy(process_spec("flaky", {"crash-once", marker.string()}));
  auto o = rt.invoke(id, inv("x"));
  ASSERT_TRUE(std::holds_alternative<Failure>(o));
  EXPECT_EQ(std::get<Failure>(o).reason, FailureReason::Crash);
  EXPECT_EQ(rt.invoke(id, inv("again")), Outcome(Forward{"again"}));
  std::filesystem::remove(marker);
}

TEST(ExternalProcess, MissingBinaryIsACrash) {
  FunctionRuntime rt;
  auto id = rt.deploy(FunctionSpec{"ghost", ProcessExecutor{{"/nonexistent/lotus-fn"}, {}}});
  auto o = rt.invoke(id, inv("x"));
  ASSERT_TRUE(std::holds_alternative<Failure>(o));
  EXPECT_EQ(std::get<Failure>(o).reason, FailureReason::Crash);
}

TEST(ExternalProcess, OutOfOrderResponsesCorrelateById) {
  FunctionRuntime rt;
  auto id = rt.deploy(process_spec("rev", {"reverse"}, 2000, 2));
  auto a = std::async(std::launch::async, [&] { return rt.invoke(id, inv("first")); });
  std::this_thread::sleep_for(20ms);
  auto b = std::async(std::launch::async, [&] { return rt.invoke(id, inv("second")); });
  EXPECT_EQ(a.get(), Outcome(Forward{"first"}));
  EXPECT_EQ(b.get(), Outcome(Forward{"second"}));
}

TEST(ExternalProcess, CrashDoesNotAffectOtherFunctions) {
  FunctionRuntime rt;
  auto bad = rt.deploy(process_spec("crash", {"crash"}));
  auto good = rt.deploy(builtin_spec("id"));
  auto good_proc = rt.deploy(process_spec("echo", {"echo"}));
  for (int i = 0; i < 10; ++i) {
    auto f = std::async(std::launch::async, [&] { return rt.invoke(bad, inv("x")); });
    EXPECT_EQ(rt.invoke(good, inv(std::to_string(i))), Outcome(Forward{std::to_string(i)}));
    EXPECT_EQ(rt.invoke(good_proc, inv(std::to_string(i))), Outcome(Forward{std::to_string(i)}));
    auto o = f.get();
    ASSERT_TRUE(std::holds_alternative<Failure>(o));
    EXPECT_EQ(std::get<Failure>(o).reason, FailureReason::Crash);
  }
}

namespace {

std::vector<std::pair<long long, long long>> run_recorded(int max_concurrency) {
  auto file = temp_file("lotus-record");
  FunctionRuntime rt;
  auto id = rt.deploy(process_spec("rec", {"record", file.string(), "100"}, 2000, max_concurrency));
  auto a = std::async(std::launch::async, [&] { return rt.invoke(id, inv("a")); });
  auto b = std::async(std::launch::async, [&] { return rt.invoke(id, inv("b")); });
  EXPECT_EQ(a.get(), Outcome(Forward{"a"}));
  EXPECT_EQ(b.get(), Outcome(Forward{"b"}));
  std::vector<std::pair<long long, long long>> out;
  std::ifstream in(file);
  long long enter, exit;
  while (in >> enter >> exit) out.emplace_back(enter, exit);
  std::filesystem::remove(file);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(Runtime, ConcurrencyCapSerializes) {
  auto intervals = run_recorded(1);
  ASSERT_EQ(intervals.size(), 2u);
  EXPECT_LE(intervals[0].second, intervals[1].first);
}

TEST(Runtime, ConcurrencyAboveOneOverlaps) {
  // Sanity check that the recording fixture can observe overlap at all.
  auto intervals = run_recorded(2);
  ASSERT_EQ(intervals.size(), 2u);
  EXPECT_GT(intervals[0].second, intervals[1].first);
}

TEST(Runtime, QueuedInvocationsAreFifo) {
  FunctionRuntime rt;
  auto id = rt.deploy(process_spec("slow", {"sleep", "30"}, 5000, 1));
  std::mutex m;
  std::vector<int> done;
  std::vector<std::thread> threads;
  for (int i = 0; i < 5; ++i) {
    threads.emplace_back([&, i] {
      rt.invoke(id, inv(std::to_string(i)));
      std::lock_guard lock(m);
      done.push_back(i);
    });
    std::this_thread::sleep_for(10ms);
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(done, (std::vector<int>{0, 1, 2, 3, 4}));
}

TEST(Runtime, RemoveDrainsInFlight) {
  FunctionRuntime rt;
  auto id = rt.deploy(process_spec("slow", {"sleep", "150"}));
  auto f = std::async(std::launch::async, [&] { return rt.invoke(id, inv("drain")); });
  std::this_thread::sleep_for(50ms);
  rt.remove(id);
  EXPECT_EQ(code_of([&] { rt.invoke(id, inv("x")); }), ErrorCode::UnknownFunction);
  EXPECT_EQ(f.get(), Outcome(Forward{"drain"}));
}

TEST(Runtime, ConcurrentDeployAndInvoke) {
  FunctionRuntime rt;
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      auto id = rt.deploy(builtin_spec("f" + std::to_string(t)));
      for (int i = 0; i < 500; ++i) {
        if (rt.invoke(id, inv("x")) == Outcome(Forward{"x"})) ++ok;
      }
      rt.remove(id);
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(ok.load(), 4000);
  EXPECT_TRUE(rt.list().empty());
}
