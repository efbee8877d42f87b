#include "lotus/client.hpp"

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "lotus/broker.hpp"
#include "lotus/error.hpp"

namespace lotus {

Client::Client(const std::string& host, std::uint16_t port, DeliveryHandler on_delivery)
    : on_delivery_(std::move(on_delivery)) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res);
  if (rc != 0) throw Error(ErrorCode::BrokerUnreachable, host + ": " + gai_strerror(rc));
  std::string last_error = "no address";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
      fd_ = fd;
      break;
    }
    last_error = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  if (fd_ < 0) throw Error(ErrorCode::BrokerUnreachable, host + ":" + std::to_string(port) + ": " + last_error);
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  reader_ = std::thread([this] { read_loop(); });
}

Client::~Client() {
  close();
  if (reader_.joinable()) reader_.join();
  ::close(fd_);
}

void Client::close() { ::shutdown(fd_, SHUT_RDWR); }

bool Client::closed() const {
  std::lock_guard lock(mutex_);
  return closed_;
}

void Client::send(const wire::Frame& frame) { send_raw(wire::encode_frame(frame)); }

void Client::send_raw(std::string_view line) {
  std::lock_guard lock(write_mutex_);
  while (!line.empty()) {
    ssize_t n = ::send(fd_, line.data(), line.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(ErrorCode::BrokerUnreachable, "connection lost");
    line.remove_prefix(static_cast<std::size_t>(n));
  }
}

std::optional<wire::Frame> Client::next(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  cv_.wait_for(lock, timeout, [&] { return closed_ || !inbox_.empty(); });
  if (inbox_.empty()) return std::nullopt;
  wire::Frame f = std::move(inbox_.front());
  inbox_.pop_front();
  return f;
}

void Client::read_loop() {
  std::string buffer;
  char chunk[64 * 1024];
  while (true) {
    ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    const std::int64_t now = monotonic_now_ns();
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t start = 0;
    for (auto pos = buffer.find('\n', start); pos != std::string::npos; pos = buffer.find('\n', start)) {
      std::string_view line = std::string_view(buffer).substr(start, pos - start);
      start = pos + 1;
      wire::Frame frame;
      try {
        frame = wire::decode_frame(line);
      } catch (const Error&) {
        continue;
      }
      if (on_delivery_) {
        if (const auto* d = std::get_if<wire::Delivery>(&frame)) {
          on_delivery_(*d, now);
          continue;
        }
      }
      std::lock_guard lock(mutex_);
      inbox_.push_back(std::move(frame));
      cv_.notify_all();
    }
    buffer.erase(0, start);
  }
  std::lock_guard lock(mutex_);
  closed_ = true;
  cv_.notify_all();
}

wire::Frame Client::expect_reply() {
  auto frame = next(kReplyTimeout);
  if (!frame) throw Error(ErrorCode::BrokerUnreachable, "no reply from broker");
  if (const auto* err = std::get_if<wire::ErrorFrame>(&*frame)) {
    throw Error(error_code_from_string(err->code).value_or(ErrorCode::InvalidArgument), err->detail);
  }
  return *frame;
}

void Client::connect(const std::string& client_id, std::optional<Location> location) {
  send(wire::Connect{client_id, location});
  auto reply = expect_reply();
  if (!std::holds_alternative<wire::ConnAck>(reply)) throw Error(ErrorCode::ProtocolViolation, "expected CONNACK");
}

std::uint64_t Client::subscribe(const std::string& filter, const Geofence& fence) {
  send(wire::Subscribe{filter, fence});
  auto reply = expect_reply();
  if (const auto* ack = std::get_if<wire::SubAck>(&reply)) return ack->sub_id;
  throw Error(ErrorCode::ProtocolViolation, "expected SUBACK");
}

wire::FSubAck Client::function_subscribe(const std::string& filter, const Geofence& fence,
                                         const FunctionRef& function) {
  send(wire::FSub{filter, fence, function});
  auto reply = expect_reply();
  if (const auto* ack = std::get_if<wire::FSubAck>(&reply)) return *ack;
  throw Error(ErrorCode::ProtocolViolation, "expected FSUBACK");
}

void Client::publish(const std::string& topic, const Bytes& payload, const Geofence& fence) {
  send(wire::Publish{topic, payload, fence});
}

}  // namespace lotus
