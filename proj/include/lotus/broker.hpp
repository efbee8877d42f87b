#pragma once

#include <atomic>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "lotus/codec.hpp"
#include "lotus/geo.hpp"
#include "lotus/topic.hpp"

namespace lotus {

using ClientId = std::string;

struct SubscriptionId {
  std::uint64_t value = 0;
  friend auto operator<=>(const SubscriptionId&, const SubscriptionId&) = default;
};

struct BridgeId {
  std::uint64_t value = 0;
  friend auto operator<=>(const BridgeId&, const BridgeId&) = default;
};

/// 128-bit identifier: a per-broker random prefix plus a monotonic counter.
struct PublicationId {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;

  std::string str() const;
  friend auto operator<=>(const PublicationId&, const PublicationId&) = default;
};

struct Publication {
  PublicationId id;
  Topic topic;
  Bytes payload;
  GeoContext geo;
  std::int64_t published_at = 0;  // broker steady clock, ns
};

struct Subscription {
  SubscriptionId id;
  ClientId client_id;  // empty for bridge-owned subscriptions
  TopicFilter filter;
  Geofence fence;
  std::optional<BridgeId> bridge;
};

struct DeliveryReport {
  PublicationId publication_id;
  std::size_t matched_plain = 0;
  std::size_t matched_bridges = 0;
};

/// Invoked once per (subscription, publication) in per-topic acceptance
/// order while the broker holds its publish lock: it must not block and must
/// not call back into the broker.
using DeliverySink = std::function<void(SubscriptionId, const Publication&)>;
/// Same contract as DeliverySink, for bridge-owned subscriptions.
using BridgeDispatch = std::function<void(BridgeId, const Publication&)>;

using SessionToken = std::uint64_t;

struct BrokerConfig {
  std::size_t max_payload = 1024 * 1024;
};

std::int64_t monotonic_now_ns() noexcept;

class SubscriptionIndex;

/// Topic-based pub/sub engine with geo-gated routing.
///
/// The subscription table is guarded by a reader/writer lock, so route()
/// always observes a consistent snapshot. Publications are accepted one at a
/// time, which fixes a single delivery order per topic.
class Broker {
 public:
  explicit Broker(BrokerConfig config = {});
  ~Broker();
  Broker(const Broker&) = delete;
  Broker& operator=(const Broker&) = delete;

  /// Opens (or replaces) the session for client_id. Replacing a live session
  /// drops all of its subscriptions.
  SessionToken connect(const ClientId& client_id, std::optional<Location> location, DeliverySink sink);
  /// Closes the session and its subscriptions. With a token, only the session
  /// that token was issued for is closed. Returns whether anything was closed.
  bool disconnect(const ClientId& client_id, std::optional<SessionToken> token = std::nullopt);
  bool has_session(const ClientId& client_id) const;

  SubscriptionId subscribe(const ClientId& client_id, const TopicFilter& filter, const Geofence& fence);
  SubscriptionId subscribe_bridge(BridgeId bridge, const TopicFilter& filter, const Geofence& fence);
  void unsubscribe(SubscriptionId id);
  /// Like unsubscribe, but only succeeds for a subscription owned by client_id.
  void unsubscribe(SubscriptionId id, const ClientId& owner);

  void update_location(const ClientId& client_id, const Location& location);
  std::optional<Location> location_of(const ClientId& client_id) const;

  std::vector<Subscription> route(const Publication& pub) const;

  DeliveryReport publish(const ClientId& client_id, const Topic& topic, Bytes payload, const Geofence& fence);
  /// Publishes on behalf of the bridge; the reserved namespace is allowed and
  /// the caller supplies the geo-context to attach.
  DeliveryReport publish_as_bridge(const Topic& topic, Bytes payload, const GeoContext& geo);

  void set_bridge_dispatch(BridgeDispatch dispatch);

  std::vector<Subscription> subscriptions() const;
  const BrokerConfig& config() const noexcept { return config_; }

 private:
  struct Session {
    SessionToken token;
    std::optional<Location> location;
    DeliverySink sink;
    std::vector<SubscriptionId> subscriptions;
  };

  SubscriptionId add_subscription_locked(const std::string& owner_key, Subscription sub);
  void remove_subscription_locked(SubscriptionId id);
  std::vector<Subscription> route_locked(const Publication& pub) const;
  DeliveryReport accept(Publication pub);

  BrokerConfig config_;
  mutable std::shared_mutex table_mutex_;
  std::unordered_map<ClientId, Session> sessions_;
  std::map<SubscriptionId, Subscription> subscriptions_;
  // (owner key, canonical filter) -> live subscription
  std::map<std::pair<std::string, std::string>, SubscriptionId> by_owner_filter_;
  std::unique_ptr<SubscriptionIndex> index_;
  std::uint64_t next_sub_id_ = 1;
  SessionToken next_token_ = 1;

  std::mutex publish_mutex_;
  BridgeDispatch bridge_dispatch_;
  std::uint64_t id_prefix_;
  std::atomic<std::uint64_t> next_pub_seq_{1};
};

}  // namespace lotus

template <>
struct std::hash<lotus::SubscriptionId> {
  std::size_t operator()(const lotus::SubscriptionId& id) const noexcept { return std::hash<std::uint64_t>{}(id.value); }
};

template <>
struct std::hash<lotus::BridgeId> {
  std::size_t operator()(const lotus::BridgeId& id) const noexcept { return std::hash<std::uint64_t>{}(id.value); }
};
