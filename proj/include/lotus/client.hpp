#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "lotus/protocol.hpp"

namespace lotus {

/// Blocking client for the NDJSON broker protocol.
///
/// DELIVERY frames go to the handler (if one is given) on the reader thread,
/// stamped with the receive time; every other frame is queued for next().
class Client {
 public:
  using DeliveryHandler = std::function<void(const wire::Delivery&, std::int64_t received_ns)>;

  /// Throws Error{BrokerUnreachable}.
  Client(const std::string& host, std::uint16_t port, DeliveryHandler on_delivery = {});
  ~Client();
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  void send(const wire::Frame& frame);
  void send_raw(std::string_view line);
  std::optional<wire::Frame> next(std::chrono::milliseconds timeout);
  bool closed() const;
  void close();

  // Request helpers; a reply of type ERROR is rethrown as Error.
  void connect(const std::string& client_id, std::optional<Location> location);
  std::uint64_t subscribe(const std::string& filter, const Geofence& fence);
  wire::FSubAck function_subscribe(const std::string& filter, const Geofence& fence, const FunctionRef& function);
  void publish(const std::string& topic, const Bytes& payload, const Geofence& fence);

  static constexpr std::chrono::milliseconds kReplyTimeout{5000};

 private:
  wire::Frame expect_reply();
  void read_loop();

  int fd_ = -1;
  DeliveryHandler on_delivery_;
  std::mutex write_mutex_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<wire::Frame> inbox_;
  bool closed_ = false;
  std::thread reader_;
};

}  // namespace lotus
