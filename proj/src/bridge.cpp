#include "lotus/bridge.hpp"

#include <deque>
#include <thread>

#include "lotus/error.hpp"

namespace lotus {

Topic derived_topic_for(const TopicFilter& filter, std::string_view function_key) {
  std::string material = filter.str();
  material.push_back('\x1f');
  material.append(function_key);
  auto digest = sha256(material);
  return Topic::from_segments(
      {std::string(kReservedSegment), "processed", to_hex(std::span(digest.data(), 16))});
}

std::string function_key(const FunctionRef& ref) {
  if (const auto* id = std::get_if<FunctionId>(&ref)) return id->name;
  auto digest = sha256(to_json(std::get<FunctionSpec>(ref)).dump());
  return "spec:" + to_hex(digest);
}

class BridgeManager::Worker {
 public:
  Worker(BridgeManager& owner, BridgeId id, FunctionId function, Topic derived)
      : id_(id), function_(std::move(function)), derived_(std::move(derived)), owner_(owner) {
    thread_ = std::thread([this] { run(); });
  }

  ~Worker() { stop(); }

  void push(const Publication& pub) {
    std::lock_guard lock(mutex_);
    if (stopped_) {
      owner_.task_done();
      return;
    }
    queue_.push_back(pub);
    cv_.notify_one();
  }

  /// Discards queued publications and joins the worker thread.
  void stop() {
    std::size_t discarded = 0;
    {
      std::lock_guard lock(mutex_);
      if (stopped_ && !thread_.joinable()) return;
      stopped_ = true;
      discarded = queue_.size();
      queue_.clear();
      cv_.notify_one();
    }
    for (std::size_t i = 0; i < discarded; ++i) owner_.task_done();
    if (thread_.joinable()) thread_.join();
  }

  BridgeCounters counters() const {
    std::lock_guard lock(mutex_);
    return counters_;
  }

  void count(const Outcome& outcome) {
    std::lock_guard lock(mutex_);
    ++counters_.invocations;
    if (std::holds_alternative<Forward>(outcome)) {
      ++counters_.forwarded;
    } else if (const auto* drop = std::get_if<Drop>(&outcome)) {
      ++counters_.dropped;
      if (drop->malformed_input) ++counters_.dropped_malformed;
    } else {
      ++counters_.failures;
      switch (std::get<Failure>(outcome).reason) {
        case FailureReason::Timeout: ++counters_.timeouts; break;
        case FailureReason::Crash: ++counters_.crashes; break;
        case FailureReason::MalformedResponse: ++counters_.malformed_responses; break;
      }
    }
  }

  void count_republish_failure() {
    std::lock_guard lock(mutex_);
    --counters_.forwarded;
    ++counters_.failures;
    ++counters_.malformed_responses;
  }

  const BridgeId id_;
  const FunctionId function_;
  const Topic derived_;

 private:
  void run() {
    while (true) {
      std::optional<Publication> pub;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return stopped_ || !queue_.empty(); });
        if (stopped_) return;
        pub.emplace(std::move(queue_.front()));
        queue_.pop_front();
      }
      owner_.process(*this, *pub);
      owner_.task_done();
    }
  }

  BridgeManager& owner_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Publication> queue_;
  bool stopped_ = false;
  BridgeCounters counters_;
  std::thread thread_;
};

namespace {

void accumulate(BridgeCounters& into, const BridgeCounters& c) {
  into.invocations += c.invocations;
  into.forwarded += c.forwarded;
  into.dropped += c.dropped;
  into.dropped_malformed += c.dropped_malformed;
  into.failures += c.failures;
  into.timeouts += c.timeouts;
  into.crashes += c.crashes;
  into.malformed_responses += c.malformed_responses;
}

}  // namespace

BridgeManager::BridgeManager(Broker& broker, FunctionRuntime& runtime, BridgeOptions options)
    : broker_(broker), runtime_(runtime), options_(options) {
  broker_.set_bridge_dispatch([this](BridgeId id, const Publication& pub) { on_matched_event(id, pub); });
}

BridgeManager::~BridgeManager() {
  broker_.set_bridge_dispatch({});
  std::map<BridgeId, std::shared_ptr<Worker>> workers;
  {
    std::unique_lock lock(workers_mutex_);
    workers.swap(workers_);
  }
  for (auto& [id, worker] : workers) worker->stop();
}

FunctionId BridgeManager::resolve_function(const FunctionRef& ref, bool& auto_deployed) {
  auto_deployed = false;
  if (const auto* id = std::get_if<FunctionId>(&ref)) {
    if (!runtime_.find(*id)) throw Error(ErrorCode::UnknownFunction, id->name);
    return *id;
  }
  const auto& spec = std::get<FunctionSpec>(ref);
  validate(spec);
  FunctionId id{spec.name};
  if (auto existing = runtime_.find(id)) {
    if (*existing != spec) throw Error(ErrorCode::DuplicateName, spec.name + " is deployed with a different spec");
    // Deployed earlier; it is ours to clean up only if another bridge deployed it.
    auto_deployed = auto_deployed_.contains(id);
    return id;
  }
  runtime_.deploy(spec);
  auto_deployed = true;
  return id;
}

FunctionSubscribeResult BridgeManager::function_subscribe(const ClientId& client_id, const TopicFilter& filter,
                                                          const Geofence& fence, const FunctionRef& function) {
  if (filter.may_match_reserved()) {
    throw Error(ErrorCode::InvalidFilter, "function subscriptions may not cover the reserved namespace");
  }
  if (!broker_.has_session(client_id)) throw Error(ErrorCode::UnknownClient, client_id);

  std::unique_lock lock(lifecycle_mutex_);
  const std::string key = function_key(function);
  auto found = by_key_.find({filter.str(), key});
  Bridge* bridge = nullptr;
  if (found != by_key_.end()) {
    bridge = &bridges_.at(found->second);
  } else {
    bool auto_deployed = false;
    FunctionId fn = resolve_function(function, auto_deployed);
    BridgeId id{next_bridge_id_++};
    Topic derived = derived_topic_for(filter, key);
    auto worker = std::make_shared<Worker>(*this, id, fn, derived);
    {
      std::unique_lock wlock(workers_mutex_);
      workers_.emplace(id, worker);
    }
    Geofence origin_fence = Geofence::world();
    SubscriptionId origin_sub = broker_.subscribe_bridge(id, filter, origin_fence);
    if (auto_deployed) ++auto_deployed_[fn];
    auto [it, inserted] =
        bridges_.emplace(id, Bridge{id, filter, origin_fence, fn, key, derived, origin_sub, {}, std::move(worker)});
    by_key_.emplace(std::make_pair(filter.str(), key), id);
    bridge = &it->second;
  }

  // One function subscription per (client, bridge); repeating it updates the fence.
  for (auto fsub_id : bridge->fsubs) {
    auto& existing = fsubs_.at(fsub_id);
    if (existing.client_id == client_id) {
      existing.client_fence = fence;
      broker_.subscribe(client_id, TopicFilter::parse(bridge->derived_topic.str()), fence);
      return {existing.id, bridge->derived_topic, bridge->id};
    }
  }

  SubscriptionId client_sub;
  try {
    client_sub = broker_.subscribe(client_id, TopicFilter::parse(bridge->derived_topic.str()), fence);
  } catch (...) {
    if (bridge->fsubs.empty()) {
      // Roll back a bridge created for this call.
      auto worker = bridge->worker;
      broker_.unsubscribe(bridge->broker_sub);
      {
        std::unique_lock wlock(workers_mutex_);
        workers_.erase(bridge->id);
      }
      worker->stop();
      if (auto it = auto_deployed_.find(bridge->function); it != auto_deployed_.end() && --it->second == 0) {
        auto_deployed_.erase(it);
        try {
          runtime_.remove(bridge->function);
        } catch (const Error&) {
        }
      }
      by_key_.erase({bridge->origin_filter.str(), bridge->key});
      bridges_.erase(bridge->id);
    }
    throw;
  }
  FunctionSubscriptionId fsub{next_fsub_id_++};
  fsubs_.emplace(fsub.value, FunctionSubscription{fsub, client_id, bridge->id, client_sub, fence});
  bridge->fsubs.insert(fsub.value);
  return {fsub, bridge->derived_topic, bridge->id};
}

void BridgeManager::function_unsubscribe(FunctionSubscriptionId id) {
  std::unique_lock lock(lifecycle_mutex_);
  unsubscribe_locked(lock, id);
}

void BridgeManager::function_unsubscribe(FunctionSubscriptionId id, const ClientId& owner) {
  std::unique_lock lock(lifecycle_mutex_);
  auto it = fsubs_.find(id.value);
  if (it == fsubs_.end() || it->second.client_id != owner) {
    throw Error(ErrorCode::UnknownFunctionSubscription, std::to_string(id.value));
  }
  unsubscribe_locked(lock, id);
}

void BridgeManager::unsubscribe_locked(std::unique_lock<std::mutex>&, FunctionSubscriptionId id) {
  auto it = fsubs_.find(id.value);
  if (it == fsubs_.end()) throw Error(ErrorCode::UnknownFunctionSubscription, std::to_string(id.value));
  FunctionSubscription fsub = it->second;
  fsubs_.erase(it);

  try {
    broker_.unsubscribe(fsub.client_sub);
  } catch (const Error&) {
    // The client session may already be gone together with its subscriptions.
  }

  auto& bridge = bridges_.at(fsub.bridge);
  bridge.fsubs.erase(id.value);
  if (!bridge.fsubs.empty()) return;

  broker_.unsubscribe(bridge.broker_sub);
  bridge.worker->stop();
  {
    std::lock_guard log_lock(log_mutex_);
    std::unique_lock wlock(workers_mutex_);
    workers_.erase(bridge.id);
    accumulate(retired_, bridge.worker->counters());
  }

  FunctionId fn = bridge.function;
  by_key_.erase({bridge.origin_filter.str(), bridge.key});
  bridges_.erase(bridge.id);

  if (auto ad = auto_deployed_.find(fn); ad != auto_deployed_.end() && --ad->second == 0) {
    auto_deployed_.erase(ad);
    bool still_used = false;
    for (const auto& [bid, b] : bridges_) still_used |= b.function == fn;
    if (!still_used) {
      try {
        runtime_.remove(fn);
      } catch (const Error&) {
        // Removed through the management API in the meantime.
      }
    }
  }
}

void BridgeManager::drop_client(const ClientId& client_id) {
  std::unique_lock lock(lifecycle_mutex_);
  std::vector<FunctionSubscriptionId> ids;
  for (const auto& [id, fsub] : fsubs_) {
    if (fsub.client_id == client_id) ids.push_back(fsub.id);
  }
  for (auto id : ids) unsubscribe_locked(lock, id);
}

void BridgeManager::on_matched_event(BridgeId bridge, const Publication& pub) {
  std::shared_ptr<Worker> worker;
  {
    std::shared_lock lock(workers_mutex_);
    auto it = workers_.find(bridge);
    if (it == workers_.end()) return;
    worker = it->second;
  }
  {
    std::lock_guard lock(idle_mutex_);
    ++pending_tasks_;
  }
  worker->push(pub);
}

void BridgeManager::task_done() {
  std::lock_guard lock(idle_mutex_);
  if (--pending_tasks_ == 0) idle_cv_.notify_all();
}

void BridgeManager::wait_idle() {
  std::unique_lock lock(idle_mutex_);
  idle_cv_.wait(lock, [&] { return pending_tasks_ == 0; });
}

void BridgeManager::record(BridgeId bridge, const PublicationId& pub) {
  if (!options_.record_invocations) return;
  std::lock_guard lock(log_mutex_);
  log_.push_back({bridge, pub});
}

void BridgeManager::process(Worker& worker, const Publication& pub) {
  Invocation inv{pub.id.str(), pub.topic.str(), pub.payload, pub.geo.location, pub.published_at};
  Outcome outcome;
  try {
    outcome = runtime_.invoke(worker.function_, inv);
  } catch (const Error& e) {
    outcome = Failure{FailureReason::Crash, e.what()};
  }
  record(worker.id_, pub.id);
  worker.count(outcome);
  if (auto* fwd = std::get_if<Forward>(&outcome)) {
    try {
      broker_.publish_as_bridge(worker.derived_, std::move(fwd->payload), pub.geo);
    } catch (const Error&) {
      worker.count_republish_failure();
    }
  }
}

std::vector<BridgeInfo> BridgeManager::bridges() const {
  std::lock_guard lock(lifecycle_mutex_);
  std::vector<BridgeInfo> out;
  for (const auto& [id, b] : bridges_) {
    out.push_back(BridgeInfo{b.id, b.origin_filter, b.origin_fence, b.function, b.derived_topic, b.fsubs.size(),
                             b.broker_sub, b.worker->counters()});
  }
  return out;
}

BridgeCounters BridgeManager::totals() const {
  BridgeCounters total;
  {
    std::lock_guard lock(log_mutex_);
    total = retired_;
  }
  std::shared_lock lock(workers_mutex_);
  for (const auto& [id, w] : workers_) accumulate(total, w->counters());
  return total;
}

std::vector<InvocationRecord> BridgeManager::invocation_log() const {
  std::lock_guard lock(log_mutex_);
  return log_;
}

}  // namespace lotus
