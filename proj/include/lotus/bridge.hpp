#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "lotus/broker.hpp"
#include "lotus/function_runtime.hpp"

namespace lotus {

/// "$lotus/processed/<hex>" where <hex> is the first 16 bytes of
/// SHA-256(canonical filter || 0x1F || function key).
Topic derived_topic_for(const TopicFilter& filter, std::string_view function_key);

/// Functions are referenced by deployed name or carried inline as a full
/// spec that is deployed on demand.
using FunctionRef = std::variant<FunctionId, FunctionSpec>;

/// Dedup key for a function: its name for references, a content digest of
/// the canonical JSON for inline specs.
std::string function_key(const FunctionRef& ref);

struct FunctionSubscriptionId {
  std::uint64_t value = 0;
  friend auto operator<=>(const FunctionSubscriptionId&, const FunctionSubscriptionId&) = default;
};

struct FunctionSubscribeResult {
  FunctionSubscriptionId fsub_id;
  Topic derived_topic;
  BridgeId bridge_id;
};

struct BridgeCounters {
  std::uint64_t invocations = 0;
  std::uint64_t forwarded = 0;
  std::uint64_t dropped = 0;
  std::uint64_t dropped_malformed = 0;  // subset of dropped
  std::uint64_t failures = 0;
  std::uint64_t timeouts = 0;  // subsets of failures
  std::uint64_t crashes = 0;
  std::uint64_t malformed_responses = 0;
};

struct BridgeInfo {
  BridgeId id;
  TopicFilter origin_filter;
  Geofence origin_fence;
  FunctionId function;
  Topic derived_topic;
  std::size_t refcount = 0;
  SubscriptionId broker_sub;
  BridgeCounters counters;
};

struct BridgeOptions {
  // Keep every (bridge, publication) pair that was handed to a function.
  bool record_invocations = false;
};

struct InvocationRecord {
  BridgeId bridge;
  PublicationId publication;
};

/// Binds (topic filter, function) pairs to derived topics and runs the
/// match -> invoke -> republish pipeline.
///
/// Every bridge owns one worker that consumes matched publications in broker
/// acceptance order, so a publication is handed to the function once per
/// bridge no matter how many clients are attached. Results are republished
/// with the original publisher geo-context, and each attached client's fence
/// is applied when the broker delivers the derived topic.
class BridgeManager {
 public:
  BridgeManager(Broker& broker, FunctionRuntime& runtime, BridgeOptions options = {});
  ~BridgeManager();
  BridgeManager(const BridgeManager&) = delete;
  BridgeManager& operator=(const BridgeManager&) = delete;

  FunctionSubscribeResult function_subscribe(const ClientId& client_id, const TopicFilter& filter,
                                             const Geofence& fence, const FunctionRef& function);
  void function_unsubscribe(FunctionSubscriptionId id);
  /// Only succeeds for a function subscription held by `owner`.
  void function_unsubscribe(FunctionSubscriptionId id, const ClientId& owner);
  /// Tears down every function subscription the client holds.
  void drop_client(const ClientId& client_id);

  /// Queues a publication matched by the bridge's origin subscription.
  void on_matched_event(BridgeId bridge, const Publication& pub);

  /// Blocks until every queued publication has been processed.
  void wait_idle();

  std::vector<BridgeInfo> bridges() const;
  BridgeCounters totals() const;
  std::vector<InvocationRecord> invocation_log() const;

 private:
  class Worker;

  struct Bridge {
    BridgeId id;
    TopicFilter origin_filter;
    Geofence origin_fence;
    FunctionId function;
    std::string key;
    Topic derived_topic;
    SubscriptionId broker_sub;
    std::set<std::uint64_t> fsubs;
    std::shared_ptr<Worker> worker;
  };

  struct FunctionSubscription {
    FunctionSubscriptionId id;
    ClientId client_id;
    BridgeId bridge;
    SubscriptionId client_sub;
    Geofence client_fence;
  };

  FunctionId resolve_function(const FunctionRef& ref, bool& auto_deployed);
  void unsubscribe_locked(std::unique_lock<std::mutex>& lock, FunctionSubscriptionId id);
  void process(Worker& worker, const Publication& pub);
  void record(BridgeId bridge, const PublicationId& pub);
  void task_done();

  Broker& broker_;
  FunctionRuntime& runtime_;
  BridgeOptions options_;

  // Serializes function_subscribe / function_unsubscribe.
  mutable std::mutex lifecycle_mutex_;
  std::map<BridgeId, Bridge> bridges_;
  std::map<std::pair<std::string, std::string>, BridgeId> by_key_;  // (filter, function key)
  std::map<std::uint64_t, FunctionSubscription> fsubs_;
  std::map<FunctionId, std::size_t> auto_deployed_;  // function -> live bridges using it
  std::uint64_t next_bridge_id_ = 1;
  std::uint64_t next_fsub_id_ = 1;

  // Dispatch path; taken by the broker while it holds its own locks.
  mutable std::shared_mutex workers_mutex_;
  std::map<BridgeId, std::shared_ptr<Worker>> workers_;

  std::mutex idle_mutex_;
  std::condition_variable idle_cv_;
  std::uint64_t pending_tasks_ = 0;

  mutable std::mutex log_mutex_;
  std::vector<InvocationRecord> log_;
  BridgeCounters retired_;  // counters of bridges already torn down
};

}  // namespace lotus
