#include "lotus/function_runtime.hpp"

#include <condition_variable>
#include <deque>
#include <set>

#include "lotus/error.hpp"
#include "process_host.hpp"

namespace lotus {
namespace {

using nlohmann::json;

constexpr std::pair<Comparison, std::string_view> kComparisons[] = {
    {Comparison::Greater, ">"},
    {Comparison::GreaterEqual, ">="},
    {Comparison::Less, "<"},
    {Comparison::LessEqual, "<="},
};

[[noreturn]] void invalid(const std::string& detail) { throw Error(ErrorCode::InvalidConfig, detail); }

const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) invalid(std::string("missing field '") + key + "'");
  return *it;
}

BuiltinExecutor builtin_from_json(const json& exec) {
  const json& kind = require(exec, "builtin");
  if (!kind.is_string()) invalid("'builtin' must be a string");
  json config = exec.value("config", json::object());
  if (!config.is_object()) invalid("'config' must be an object");

  const auto& name = kind.get_ref<const std::string&>();
  if (name == "identity") return IdentityConfig{};
  if (name == "json_to_csv") return JsonToCsvConfig{};
  if (name == "threshold_filter") {
    ThresholdConfig cfg;
    const json& field = require(config, "field");
    const json& op = require(config, "op");
    const json& threshold = require(config, "threshold");
    if (!field.is_string() || !op.is_string() || !threshold.is_number()) {
      invalid("threshold_filter config needs string field, string op, numeric threshold");
    }
    cfg.field = field.get<std::string>();
    cfg.threshold = threshold.get<double>();
    bool known = false;
    for (auto [cmp, text] : kComparisons) {
      if (op.get_ref<const std::string&>() == text) {
        cfg.op = cmp;
        known = true;
      }
    }
    if (!known) invalid("unknown comparison " + op.get<std::string>());
    return cfg;
  }
  if (name == "extract_keys") {
    const json& keys = require(config, "keys");
    if (!keys.is_array()) invalid("extract_keys 'keys' must be an array");
    ExtractKeysConfig cfg;
    for (const auto& k : keys) {
      if (!k.is_string()) invalid("extract_keys keys must be strings");
      cfg.keys.push_back(k.get<std::string>());
    }
    return cfg;
  }
  invalid("unknown builtin kind " + name);
}

json builtin_to_json(const BuiltinExecutor& exec) {
  struct Visitor {
    json operator()(const IdentityConfig&) const { return {{"builtin", "identity"}, {"config", json::object()}}; }
    json operator()(const JsonToCsvConfig&) const { return {{"builtin", "json_to_csv"}, {"config", json::object()}}; }
    json operator()(const ThresholdConfig& c) const {
      std::string op;
      for (auto [cmp, text] : kComparisons) {
        if (cmp == c.op) op = text;
      }
      return {{"builtin", "threshold_filter"},
              {"config", {{"field", c.field}, {"op", op}, {"threshold", c.threshold}}}};
    }
    json operator()(const ExtractKeysConfig& c) const {
      return {{"builtin", "extract_keys"}, {"config", {{"keys", c.keys}}}};
    }
  };
  json out = std::visit(Visitor{}, exec);
  out["kind"] = "builtin";
  return out;
}

/// Admits waiters strictly in arrival order, at most `permits` at a time.
class FifoSemaphore {
 public:
  explicit FifoSemaphore(std::int64_t permits) : available_(permits) {}

  void acquire() {
    std::unique_lock lock(mutex_);
    std::uint64_t ticket = next_ticket_++;
    queue_.push_back(ticket);
    cv_.wait(lock, [&] { return available_ > 0 && queue_.front() == ticket; });
    queue_.pop_front();
    --available_;
    cv_.notify_all();
  }

  void release() {
    std::lock_guard lock(mutex_);
    ++available_;
    cv_.notify_all();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::int64_t available_;
  std::deque<std::uint64_t> queue_;
  std::uint64_t next_ticket_ = 0;
};

}  // namespace

std::string_view to_string(FailureReason reason) noexcept {
  switch (reason) {
    case FailureReason::Timeout: return "Timeout";
    case FailureReason::Crash: return "Crash";
    case FailureReason::MalformedResponse: return "MalformedResponse";
  }
  return "Unknown";
}

FunctionSpec function_spec_from_json(const json& j) {
  if (!j.is_object()) invalid("function spec must be a JSON object");
  FunctionSpec spec;
  const json& name = require(j, "name");
  if (!name.is_string()) invalid("'name' must be a string");
  spec.name = name.get<std::string>();

  const json& exec = require(j, "executor");
  if (!exec.is_object()) invalid("'executor' must be an object");
  const json& kind = require(exec, "kind");
  if (kind == "builtin") {
    spec.executor = builtin_from_json(exec);
  } else if (kind == "process") {
    ProcessExecutor proc;
    const json& command = require(exec, "command");
    if (!command.is_array()) invalid("'command' must be an array of strings");
    for (const auto& arg : command) {
      if (!arg.is_string()) invalid("'command' must be an array of strings");
      proc.command.push_back(arg.get<std::string>());
    }
    json env = exec.value("env", json::object());
    if (!env.is_object()) invalid("'env' must be an object");
    for (const auto& [k, v] : env.items()) {
      if (!v.is_string()) invalid("env values must be strings");
      proc.env[k] = v.get<std::string>();
    }
    spec.executor = std::move(proc);
  } else {
    invalid("executor kind must be 'builtin' or 'process'");
  }

  if (auto it = j.find("timeout_ms"); it != j.end()) {
    if (!it->is_number_integer()) invalid("'timeout_ms' must be an integer");
    spec.timeout_ms = it->get<std::int64_t>();
  }
  if (auto it = j.find("max_concurrency"); it != j.end()) {
    if (!it->is_number_integer()) invalid("'max_concurrency' must be an integer");
    spec.max_concurrency = it->get<std::int64_t>();
  }
  validate(spec);
  return spec;
}

json to_json(const FunctionSpec& spec) {
  json exec;
  if (const auto* b = std::get_if<BuiltinExecutor>(&spec.executor)) {
    exec = builtin_to_json(*b);
  } else {
    const auto& p = std::get<ProcessExecutor>(spec.executor);
    exec = {{"kind", "process"}, {"command", p.command}, {"env", p.env}};
  }
  return {{"name", spec.name}, {"executor", exec}, {"timeout_ms", spec.timeout_ms},
          {"max_concurrency", spec.max_concurrency}};
}

void validate(const FunctionSpec& spec) {
  if (spec.name.empty()) invalid("function name must not be empty");
  if (spec.timeout_ms <= 0) invalid("timeout_ms must be positive");
  if (spec.max_concurrency <= 0) invalid("max_concurrency must be positive");
  if (const auto* b = std::get_if<BuiltinExecutor>(&spec.executor)) {
    if (const auto* t = std::get_if<ThresholdConfig>(b)) {
      if (t->field.empty()) invalid("threshold_filter field must not be empty");
      if (!std::isfinite(t->threshold)) invalid("threshold must be finite");
    }
    if (const auto* e = std::get_if<ExtractKeysConfig>(b)) {
      if (e->keys.empty()) invalid("extract_keys needs at least one key");
      std::set<std::string> seen(e->keys.begin(), e->keys.end());
      if (seen.size() != e->keys.size()) invalid("extract_keys keys must be unique");
    }
  } else {
    const auto& p = std::get<ProcessExecutor>(spec.executor);
    if (p.command.empty() || p.command.front().empty()) invalid("process command must not be empty");
  }
}

class FunctionRuntime::Deployed {
 public:
  Deployed(FunctionSpec spec, std::size_t max_payload)
      : spec_(std::move(spec)), slots_(spec_.max_concurrency), max_payload_(max_payload) {
    if (const auto* p = std::get_if<ProcessExecutor>(&spec_.executor)) {
      process_ = std::make_unique<detail::ProcessHost>(*p, max_payload);
    }
  }

  const FunctionSpec& spec() const noexcept { return spec_; }

  Outcome invoke(const Invocation& inv) {
    slots_.acquire();
    struct Release {
      FifoSemaphore& s;
      ~Release() { s.release(); }
    } release{slots_};

    if (process_) return process_->call(inv, std::chrono::milliseconds(spec_.timeout_ms));
    Outcome out = run_builtin(std::get<BuiltinExecutor>(spec_.executor), inv.payload);
    if (auto* fwd = std::get_if<Forward>(&out); fwd && fwd->payload.size() > max_payload_) {
      return Failure{FailureReason::MalformedResponse, "forwarded payload exceeds cap"};
    }
    return out;
  }

 private:
  static Outcome run_builtin(const BuiltinExecutor& exec, const Bytes& payload) {
    struct Visitor {
      const Bytes& payload;
      Outcome operator()(const IdentityConfig&) const { return builtin::identity(payload); }
      Outcome operator()(const ThresholdConfig& c) const { return builtin::threshold_filter(payload, c); }
      Outcome operator()(const JsonToCsvConfig&) const { return builtin::json_to_csv(payload); }
      Outcome operator()(const ExtractKeysConfig& c) const { return builtin::extract_keys(payload, c); }
    };
    return std::visit(Visitor{payload}, exec);
  }

  FunctionSpec spec_;
  FifoSemaphore slots_;
  std::size_t max_payload_;
  std::unique_ptr<detail::ProcessHost> process_;
};

FunctionRuntime::FunctionRuntime(RuntimeConfig config) : config_(config) {}

FunctionRuntime::~FunctionRuntime() = default;

FunctionId FunctionRuntime::deploy(FunctionSpec spec) {
  validate(spec);
  FunctionId id{spec.name};
  auto deployed = std::make_shared<Deployed>(std::move(spec), config_.max_payload);
  std::lock_guard lock(mutex_);
  if (functions_.contains(id)) throw Error(ErrorCode::DuplicateName, id.name);
  functions_.emplace(id, std::move(deployed));
  return id;
}

void FunctionRuntime::remove(const FunctionId& id) {
  std::shared_ptr<Deployed> victim;
  {
    std::lock_guard lock(mutex_);
    auto it = functions_.find(id);
    if (it == functions_.end()) throw Error(ErrorCode::UnknownFunction, id.name);
    victim = std::move(it->second);
    functions_.erase(it);
  }
  // `victim` may outlive this call if invocations are still running.
}

std::vector<FunctionSpec> FunctionRuntime::list() const {
  std::lock_guard lock(mutex_);
  std::vector<FunctionSpec> out;
  for (const auto& [id, fn] : functions_) out.push_back(fn->spec());
  return out;
}

std::optional<FunctionSpec> FunctionRuntime::find(const FunctionId& id) const {
  std::lock_guard lock(mutex_);
  auto it = functions_.find(id);
  if (it == functions_.end()) return std::nullopt;
  return it->second->spec();
}

Outcome FunctionRuntime::invoke(const FunctionId& id, const Invocation& inv) {
  std::shared_ptr<Deployed> fn;
  {
    std::lock_guard lock(mutex_);
    auto it = functions_.find(id);
    if (it == functions_.end()) throw Error(ErrorCode::UnknownFunction, id.name);
    fn = it->second;
  }
  return fn->invoke(inv);
}

}  // namespace lotus
