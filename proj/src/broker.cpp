#include "lotus/broker.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>

#include "lotus/error.hpp"

namespace lotus {

std::string PublicationId::str() const {
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(hi),
                static_cast<unsigned long long>(lo));
  return buf;
}

std::int64_t monotonic_now_ns() noexcept {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// Topic trie keyed by filter segments. '+' and '#' get dedicated children so
// a lookup only visits branches that can match.
class SubscriptionIndex {
 public:
  void insert(const TopicFilter& filter, SubscriptionId id) {
    Node* node = &root_;
    for (const auto& seg : filter.segments()) {
      if (seg == "#") {
        node->multi.push_back(id);
        return;
      }
      auto& child = seg == "+" ? node->single : node->children[seg];
      if (!child) child = std::make_unique<Node>();
      node = child.get();
    }
    node->terminal.push_back(id);
  }

  void erase(const TopicFilter& filter, SubscriptionId id) { erase(root_, filter.segments(), 0, id); }

  void collect(const Topic& topic, std::vector<SubscriptionId>& out) const {
    collect(root_, topic.segments(), 0, out);
  }

 private:
  struct Node {
    std::map<std::string, std::unique_ptr<Node>, std::less<>> children;
    std::unique_ptr<Node> single;
    std::vector<SubscriptionId> terminal;
    std::vector<SubscriptionId> multi;

    bool empty() const { return children.empty() && !single && terminal.empty() && multi.empty(); }
  };

  static void remove_id(std::vector<SubscriptionId>& v, SubscriptionId id) {
    v.erase(std::remove(v.begin(), v.end(), id), v.end());
  }

  // Returns true when `node` became empty and can be pruned by its parent.
  static bool erase(Node& node, const std::vector<std::string>& segs, std::size_t i, SubscriptionId id) {
    if (i == segs.size()) {
      remove_id(node.terminal, id);
    } else if (segs[i] == "#") {
      remove_id(node.multi, id);
    } else if (segs[i] == "+") {
      if (node.single && erase(*node.single, segs, i + 1, id)) node.single.reset();
    } else if (auto it = node.children.find(segs[i]); it != node.children.end()) {
      if (erase(*it->second, segs, i + 1, id)) node.children.erase(it);
    }
    return node.empty();
  }

  static void collect(const Node& node, const std::vector<std::string>& segs, std::size_t i,
                      std::vector<SubscriptionId>& out) {
    if (i == segs.size()) {
      out.insert(out.end(), node.terminal.begin(), node.terminal.end());
      return;
    }
    out.insert(out.end(), node.multi.begin(), node.multi.end());
    if (auto it = node.children.find(segs[i]); it != node.children.end()) collect(*it->second, segs, i + 1, out);
    if (node.single) collect(*node.single, segs, i + 1, out);
  }

  Node root_;
};

Broker::Broker(BrokerConfig config) : config_(config), index_(std::make_unique<SubscriptionIndex>()) {
  std::random_device rd;
  id_prefix_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

Broker::~Broker() = default;

SessionToken Broker::connect(const ClientId& client_id, std::optional<Location> location, DeliverySink sink) {
  if (client_id.empty()) throw Error(ErrorCode::InvalidArgument, "client_id must not be empty");
  std::unique_lock lock(table_mutex_);
  if (auto it = sessions_.find(client_id); it != sessions_.end()) {
    for (auto id : it->second.subscriptions) remove_subscription_locked(id);
    sessions_.erase(it);
  }
  SessionToken token = next_token_++;
  sessions_.emplace(client_id, Session{token, location, std::move(sink), {}});
  return token;
}

bool Broker::disconnect(const ClientId& client_id, std::optional<SessionToken> token) {
  std::unique_lock lock(table_mutex_);
  auto it = sessions_.find(client_id);
  if (it == sessions_.end()) return false;
  if (token && it->second.token != *token) return false;
  for (auto id : it->second.subscriptions) remove_subscription_locked(id);
  sessions_.erase(it);
  return true;
}

bool Broker::has_session(const ClientId& client_id) const {
  std::shared_lock lock(table_mutex_);
  return sessions_.contains(client_id);
}

SubscriptionId Broker::add_subscription_locked(const std::string& owner_key, Subscription sub) {
  auto key = std::make_pair(owner_key, sub.filter.str());
  if (auto it = by_owner_filter_.find(key); it != by_owner_filter_.end()) {
    subscriptions_.at(it->second).fence = sub.fence;
    return it->second;
  }
  sub.id = SubscriptionId{next_sub_id_++};
  index_->insert(sub.filter, sub.id);
  by_owner_filter_.emplace(std::move(key), sub.id);
  auto id = sub.id;
  subscriptions_.emplace(id, std::move(sub));
  return id;
}

void Broker::remove_subscription_locked(SubscriptionId id) {
  auto it = subscriptions_.find(id);
  if (it == subscriptions_.end()) return;
  const auto& sub = it->second;
  std::string owner_key = sub.bridge ? "bridge:" + std::to_string(sub.bridge->value) : "client:" + sub.client_id;
  by_owner_filter_.erase({owner_key, sub.filter.str()});
  index_->erase(sub.filter, id);
  subscriptions_.erase(it);
}

SubscriptionId Broker::subscribe(const ClientId& client_id, const TopicFilter& filter, const Geofence& fence) {
  std::unique_lock lock(table_mutex_);
  auto session = sessions_.find(client_id);
  if (session == sessions_.end()) throw Error(ErrorCode::UnknownClient, client_id);
  auto id = add_subscription_locked("client:" + client_id, Subscription{{}, client_id, filter, fence, std::nullopt});
  auto& subs = session->second.subscriptions;
  if (std::find(subs.begin(), subs.end(), id) == subs.end()) subs.push_back(id);
  return id;
}

SubscriptionId Broker::subscribe_bridge(BridgeId bridge, const TopicFilter& filter, const Geofence& fence) {
  std::unique_lock lock(table_mutex_);
  return add_subscription_locked("bridge:" + std::to_string(bridge.value), Subscription{{}, {}, filter, fence, bridge});
}

void Broker::unsubscribe(SubscriptionId id) {
  std::unique_lock lock(table_mutex_);
  auto it = subscriptions_.find(id);
  if (it == subscriptions_.end()) throw Error(ErrorCode::UnknownSubscription, std::to_string(id.value));
  if (!it->second.bridge) {
    if (auto s = sessions_.find(it->second.client_id); s != sessions_.end()) {
      auto& subs = s->second.subscriptions;
      subs.erase(std::remove(subs.begin(), subs.end(), id), subs.end());
    }
  }
  remove_subscription_locked(id);
}

void Broker::unsubscribe(SubscriptionId id, const ClientId& owner) {
  {
    std::shared_lock lock(table_mutex_);
    auto it = subscriptions_.find(id);
    if (it == subscriptions_.end() || it->second.bridge || it->second.client_id != owner) {
      throw Error(ErrorCode::UnknownSubscription, std::to_string(id.value));
    }
  }
  unsubscribe(id);
}

void Broker::update_location(const ClientId& client_id, const Location& location) {
  std::unique_lock lock(table_mutex_);
  auto it = sessions_.find(client_id);
  if (it == sessions_.end()) throw Error(ErrorCode::UnknownClient, client_id);
  it->second.location = location;
}

std::optional<Location> Broker::location_of(const ClientId& client_id) const {
  std::shared_lock lock(table_mutex_);
  auto it = sessions_.find(client_id);
  if (it == sessions_.end()) throw Error(ErrorCode::UnknownClient, client_id);
  return it->second.location;
}

std::vector<Subscription> Broker::route_locked(const Publication& pub) const {
  std::vector<SubscriptionId> candidates;
  index_->collect(pub.topic, candidates);
  std::sort(candidates.begin(), candidates.end());
  std::vector<Subscription> out;
  for (auto id : candidates) {
    const auto& sub = subscriptions_.at(id);
    if (sub.bridge) {
      // The bridge sits next to the broker and has no location of its own;
      // the subscriber-side check happens when the result is republished.
      if (point_in_fence(pub.geo.location, sub.fence)) out.push_back(sub);
      continue;
    }
    auto session = sessions_.find(sub.client_id);
    if (session == sessions_.end()) continue;
    const auto& loc = session->second.location;
    bool match = loc ? geo_match(pub.geo, *loc, sub.fence)
                     : pub.geo.fence.is_world() && point_in_fence(pub.geo.location, sub.fence);
    if (match) out.push_back(sub);
  }
  return out;
}

std::vector<Subscription> Broker::route(const Publication& pub) const {
  std::shared_lock lock(table_mutex_);
  return route_locked(pub);
}

DeliveryReport Broker::publish(const ClientId& client_id, const Topic& topic, Bytes payload, const Geofence& fence) {
  if (topic.reserved()) throw Error(ErrorCode::ReservedTopic, topic.str());
  std::optional<Location> location = location_of(client_id);
  if (!location) throw Error(ErrorCode::PublisherLocationUnknown, client_id);
  return accept(Publication{{}, topic, std::move(payload), GeoContext{*location, fence}, 0});
}

DeliveryReport Broker::publish_as_bridge(const Topic& topic, Bytes payload, const GeoContext& geo) {
  return accept(Publication{{}, topic, std::move(payload), geo, 0});
}

DeliveryReport Broker::accept(Publication pub) {
  if (pub.payload.size() > config_.max_payload) {
    throw Error(ErrorCode::PayloadTooLarge,
                std::to_string(pub.payload.size()) + " > " + std::to_string(config_.max_payload));
  }
  pub.id = PublicationId{id_prefix_, next_pub_seq_.fetch_add(1)};

  std::lock_guard order(publish_mutex_);
  pub.published_at = monotonic_now_ns();
  DeliveryReport report{pub.id, 0, 0};
  std::shared_lock lock(table_mutex_);
  for (const auto& sub : route_locked(pub)) {
    if (sub.bridge) {
      ++report.matched_bridges;
      if (bridge_dispatch_) bridge_dispatch_(*sub.bridge, pub);
      continue;
    }
    ++report.matched_plain;
    const auto& sink = sessions_.at(sub.client_id).sink;
    if (sink) sink(sub.id, pub);
  }
  return report;
}

void Broker::set_bridge_dispatch(BridgeDispatch dispatch) {
  std::lock_guard order(publish_mutex_);
  bridge_dispatch_ = std::move(dispatch);
}

std::vector<Subscription> Broker::subscriptions() const {
  std::shared_lock lock(table_mutex_);
  std::vector<Subscription> out;
  out.reserve(subscriptions_.size());
  for (const auto& [id, sub] : subscriptions_) out.push_back(sub);
  return out;
}

}  // namespace lotus
