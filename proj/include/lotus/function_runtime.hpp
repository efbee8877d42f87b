#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lotus/codec.hpp"
#include "lotus/geo.hpp"

namespace lotus {

enum class Comparison { Greater, GreaterEqual, Less, LessEqual };

struct IdentityConfig {
  friend bool operator==(const IdentityConfig&, const IdentityConfig&) = default;
};

struct ThresholdConfig {
  std::string field;
  Comparison op = Comparison::Greater;
  double threshold = 0.0;
  friend bool operator==(const ThresholdConfig&, const ThresholdConfig&) = default;
};

struct JsonToCsvConfig {
  friend bool operator==(const JsonToCsvConfig&, const JsonToCsvConfig&) = default;
};

struct ExtractKeysConfig {
  std::vector<std::string> keys;
  friend bool operator==(const ExtractKeysConfig&, const ExtractKeysConfig&) = default;
};

using BuiltinExecutor = std::variant<IdentityConfig, ThresholdConfig, JsonToCsvConfig, ExtractKeysConfig>;

/// A long-lived child process speaking the line-delimited request/response
/// contract on its standard input and output.
struct ProcessExecutor {
  std::vector<std::string> command;
  std::map<std::string, std::string> env;
  friend bool operator==(const ProcessExecutor&, const ProcessExecutor&) = default;
};

struct FunctionSpec {
  std::string name;
  std::variant<BuiltinExecutor, ProcessExecutor> executor;
  std::int64_t timeout_ms = 1000;
  std::int64_t max_concurrency = 8;
  friend bool operator==(const FunctionSpec&, const FunctionSpec&) = default;
};

/// JSON form used by the management API and by FSUB frames:
///   {"name", "executor": {"kind":"builtin","builtin":<kind>,"config":{...}}
///                      | {"kind":"process","command":[...],"env":{...}},
///    "timeout_ms"?, "max_concurrency"?}
/// Throws Error{InvalidConfig}.
FunctionSpec function_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FunctionSpec& spec);
/// Throws Error{InvalidConfig} when the spec is not deployable.
void validate(const FunctionSpec& spec);

struct FunctionId {
  std::string name;
  friend auto operator<=>(const FunctionId&, const FunctionId&) = default;
};

struct Invocation {
  std::string publication_id;
  std::string topic;
  Bytes payload;
  Location publisher_location;
  std::int64_t published_at = 0;
};

struct Forward {
  Bytes payload;
  friend bool operator==(const Forward&, const Forward&) = default;
};

struct Drop {
  // Set when the input could not be evaluated at all (fail-closed path).
  bool malformed_input = false;
  friend bool operator==(const Drop&, const Drop&) = default;
};

enum class FailureReason { Timeout, Crash, MalformedResponse };

struct Failure {
  FailureReason reason;
  std::string detail;
  friend bool operator==(const Failure& a, const Failure& b) { return a.reason == b.reason; }
};

using Outcome = std::variant<Forward, Drop, Failure>;

std::string_view to_string(FailureReason reason) noexcept;

namespace builtin {
Outcome identity(const Bytes& payload);
Outcome threshold_filter(const Bytes& payload, const ThresholdConfig& config);
Outcome json_to_csv(const Bytes& payload);
Outcome extract_keys(const Bytes& payload, const ExtractKeysConfig& config);
}  // namespace builtin

struct RuntimeConfig {
  std::size_t max_payload = 1024 * 1024;
};

/// Registry of deployed functions plus their executors.
///
/// Invocations of one function are admitted FIFO up to max_concurrency.
/// Removing a function only unregisters it: invocations already running keep
/// their executor alive and a warm process is terminated once they finish.
class FunctionRuntime {
 public:
  explicit FunctionRuntime(RuntimeConfig config = {});
  ~FunctionRuntime();
  FunctionRuntime(const FunctionRuntime&) = delete;
  FunctionRuntime& operator=(const FunctionRuntime&) = delete;

  FunctionId deploy(FunctionSpec spec);
  void remove(const FunctionId& id);
  std::vector<FunctionSpec> list() const;
  std::optional<FunctionSpec> find(const FunctionId& id) const;

  /// Throws Error{UnknownFunction}; everything else is an Outcome.
  Outcome invoke(const FunctionId& id, const Invocation& inv);

  class Deployed;

 private:
  RuntimeConfig config_;
  mutable std::mutex mutex_;
  std::map<FunctionId, std::shared_ptr<Deployed>> functions_;
};

}  // namespace lotus
