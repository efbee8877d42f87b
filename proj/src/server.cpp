#include "lotus/server.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <deque>
#include <system_error>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "lotus/error.hpp"
#include "lotus/session.hpp"

namespace lotus {

using nlohmann::json;

class Server::Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(Server& server, int fd) : server_(server), fd_(fd) {}

  ~Connection() {
    if (fd_ >= 0) ::close(fd_);
  }

  void start() {
    auto self = shared_from_this();
    std::thread([self] { self->read_loop(); }).detach();
    std::thread([self] { self->write_loop(); }).detach();
  }

  /// Queues one encoded line. Droppable lines (deliveries) are discarded
  /// once the outbound backlog exceeds the configured cap.
  void enqueue(std::string line, bool droppable) {
    std::lock_guard lock(mutex_);
    if (closing_) return;
    if (droppable && queued_bytes_ + line.size() > server_.config_.max_outbound_bytes) {
      ++dropped_;
      return;
    }
    queued_bytes_ += line.size();
    bool was_empty = outbound_.empty();
    outbound_.push_back(std::move(line));
    // The writer only sleeps on an empty queue.
    if (was_empty) cv_.notify_one();
  }

  /// Stops the session immediately, without flushing.
  void abort() {
    {
      std::lock_guard lock(mutex_);
      closing_ = true;
      outbound_.clear();
      cv_.notify_one();
    }
    ::shutdown(fd_, SHUT_RDWR);
  }

  bool owns_session(const ClientId& id) const { return state_.phase != wire::Phase::Fresh && state_.client_id == id; }

  wire::SessionState state_;
  std::optional<SessionToken> token_;

 private:
  void finish_writes() {
    std::lock_guard lock(mutex_);
    closing_ = true;
    cv_.notify_one();
  }

  void read_loop() {
    std::string buffer;
    char chunk[64 * 1024];
    const std::size_t max_line = server_.config_.max_payload * 4 / 3 + 64 * 1024;
    bool open = true;
    while (open) {
      ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      buffer.append(chunk, static_cast<std::size_t>(n));
      std::size_t start = 0;
      for (auto pos = buffer.find('\n', start); open && pos != std::string::npos; pos = buffer.find('\n', start)) {
        open = handle_line(std::string_view(buffer).substr(start, pos - start));
        start = pos + 1;
      }
      buffer.erase(0, start);
      if (open && buffer.size() > max_line) {
        reply(wire::ErrorFrame{std::string(to_string(ErrorCode::PayloadTooLarge)), "line too long"});
        open = false;
      }
    }
    server_.release_session(shared_from_this());
    finish_writes();
    thread_done();
  }

  void thread_done() {
    if (--threads_ == 0) server_.connection_finished(shared_from_this());
  }

  void write_loop() {
    while (true) {
      std::deque<std::string> batch;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return closing_ || !outbound_.empty(); });
        if (outbound_.empty()) break;
        batch.swap(outbound_);
        queued_bytes_ = 0;
      }
      std::string joined;
      for (auto& line : batch) joined += line;
      std::string_view rest = joined;
      while (!rest.empty()) {
        ssize_t n = ::send(fd_, rest.data(), rest.size(), MSG_NOSIGNAL);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) {
          abort();
          thread_done();
          return;
        }
        rest.remove_prefix(static_cast<std::size_t>(n));
      }
    }
    ::shutdown(fd_, SHUT_RDWR);
    thread_done();
  }

  void reply(const wire::Frame& frame) { enqueue(wire::encode_frame(frame), false); }

  void reply_error(const Error& e) { reply(wire::ErrorFrame{std::string(to_string(e.code())), e.detail()}); }

  // Returns false once the session must close.
  bool handle_line(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) return true;
    wire::Frame frame;
    try {
      frame = wire::decode_frame(line);
    } catch (const Error& e) {
      reply_error(e);
      return true;
    }
    auto step = wire::session_step(state_, frame);
    state_ = step.state;
    for (auto& act : step.actions) {
      if (std::holds_alternative<wire::action::Close>(act)) return false;
      execute(act);
    }
    return true;
  }

  void execute(wire::Action& act) {
    namespace a = wire::action;
    auto& broker = server_.broker_;
    auto& bridges = server_.bridges_;
    const ClientId& me = state_.client_id;
    try {
      if (auto* c = std::get_if<a::Connect>(&act)) {
        server_.bind_client(shared_from_this(), c->client_id);
        std::weak_ptr<Connection> weak = weak_from_this();
        token_ = broker.connect(c->client_id, c->location, [weak](SubscriptionId, const Publication& pub) {
          if (auto conn = weak.lock()) conn->enqueue(conn->server_.delivery_line(pub), true);
        });
      } else if (auto* u = std::get_if<a::UpdateLocation>(&act)) {
        broker.update_location(me, u->location);
      } else if (auto* s = std::get_if<a::Subscribe>(&act)) {
        auto id = broker.subscribe(me, TopicFilter::parse(s->filter), s->fence);
        reply(wire::SubAck{id.value});
      } else if (auto* un = std::get_if<a::Unsubscribe>(&act)) {
        broker.unsubscribe(SubscriptionId{un->sub_id}, me);
      } else if (auto* p = std::get_if<a::Publish>(&act)) {
        broker.publish(me, Topic::parse(p->topic), std::move(p->payload), p->fence);
      } else if (auto* f = std::get_if<a::FunctionSubscribe>(&act)) {
        auto result = bridges.function_subscribe(me, TopicFilter::parse(f->filter), f->fence, f->function);
        reply(wire::FSubAck{result.fsub_id.value, result.derived_topic.str()});
      } else if (auto* fu = std::get_if<a::FunctionUnsubscribe>(&act)) {
        bridges.function_unsubscribe(FunctionSubscriptionId{fu->fsub_id}, me);
      } else if (auto* r = std::get_if<a::Reply>(&act)) {
        reply(r->frame);
      }
    } catch (const Error& e) {
      reply_error(e);
    }
  }

  Server& server_;
  int fd_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::string> outbound_;
  std::size_t queued_bytes_ = 0;
  std::uint64_t dropped_ = 0;
  bool closing_ = false;
  std::atomic<int> threads_{2};
};

Server::Server(ServerConfig config)
    : config_(std::move(config)),
      broker_(BrokerConfig{config_.max_payload}),
      runtime_(RuntimeConfig{config_.max_payload}),
      bridges_(broker_, runtime_, config_.bridge) {}

Server::~Server() { stop(); }

void Server::start() {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (listen_fd_ < 0) throw std::system_error(errno, std::generic_category(), "socket");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(config_.port);
  if (::inet_pton(AF_INET, config_.host.c_str(), &addr.sin_addr) != 1) {
    throw Error(ErrorCode::InvalidConfig, "bad listen address " + config_.host);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 512) != 0) {
    int err = errno;
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw std::system_error(err, std::generic_category(), "bind/listen on port " + std::to_string(config_.port));
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);

  setup_management();
  int mgmt = config_.mgmt_port == 0 ? mgmt_->bind_to_any_port(config_.host)
                                    : (mgmt_->bind_to_port(config_.host, config_.mgmt_port) ? config_.mgmt_port : -1);
  if (mgmt < 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw std::system_error(EADDRINUSE, std::generic_category(),
                            "bind management port " + std::to_string(config_.mgmt_port));
  }
  mgmt_port_ = static_cast<std::uint16_t>(mgmt);
  running_ = true;
  mgmt_thread_ = std::thread([this] { mgmt_->listen_after_bind(); });
  accept_thread_ = std::thread([this] { accept_loop(); });
  spdlog::info("lotus broker listening on {}:{} (management on port {})", config_.host, port_, mgmt_port_);
}

void Server::stop() {
  if (!running_) return;
  running_ = false;
  ::shutdown(listen_fd_, SHUT_RDWR);
  if (accept_thread_.joinable()) accept_thread_.join();
  ::close(listen_fd_);
  listen_fd_ = -1;
  mgmt_->stop();
  if (mgmt_thread_.joinable()) mgmt_thread_.join();

  std::unique_lock lock(conn_mutex_);
  for (auto& [ptr, conn] : connections_) conn->abort();
  conn_cv_.wait(lock, [&] { return connections_.empty(); });
}

void Server::accept_loop() {
  while (true) {
    int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
      if (errno == EINTR || errno == ECONNABORTED) continue;
      if (errno == EMFILE || errno == ENFILE) {
        spdlog::warn("accept: out of file descriptors");
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        continue;
      }
      return;  // listener shut down
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    auto conn = std::make_shared<Connection>(*this, fd);
    {
      std::lock_guard lock(conn_mutex_);
      if (!running_) {
        continue;  // conn closes the fd
      }
      connections_.emplace(conn.get(), conn);
    }
    conn->start();
  }
}

void Server::bind_client(const std::shared_ptr<Connection>& conn, const ClientId& client_id) {
  std::lock_guard lock(conn_mutex_);
  auto it = clients_.find(client_id);
  if (it != clients_.end()) {
    if (auto old = it->second.lock(); old && old != conn) {
      spdlog::info("client {} reconnected; evicting previous session", client_id);
      bridges_.drop_client(client_id);
      broker_.disconnect(client_id);
      old->abort();
    }
  }
  clients_[client_id] = conn;
}

void Server::release_session(const std::shared_ptr<Connection>& conn) {
  std::lock_guard lock(conn_mutex_);
  const ClientId& id = conn->state_.client_id;
  if (!conn->owns_session(id)) return;
  auto it = clients_.find(id);
  if (it != clients_.end() && it->second.lock() == conn) {
    bridges_.drop_client(id);
    broker_.disconnect(id, conn->token_);
    clients_.erase(it);
  }
}

void Server::connection_finished(const std::shared_ptr<Connection>& conn) {
  std::lock_guard lock(conn_mutex_);
  connections_.erase(conn.get());
  conn_cv_.notify_all();
}

std::string Server::delivery_line(const Publication& pub) {
  std::lock_guard lock(delivery_cache_mutex_);
  if (cached_line_.empty() || cached_pub_ != pub.id) {
    cached_pub_ = pub.id;
    cached_line_ = wire::encode_frame(wire::Delivery{pub.topic.str(), pub.payload, pub.id.str(), pub.published_at});
  }
  return cached_line_;
}

void Server::setup_management() {
  mgmt_ = std::make_unique<httplib::Server>();
  auto send_error = [](httplib::Response& res, int status, const Error& e) {
    res.status = status;
    res.set_content(json{{"code", to_string(e.code())}, {"detail", e.detail()}}.dump(), "application/json");
  };

  mgmt_->Post("/functions", [this, send_error](const httplib::Request& req, httplib::Response& res) {
    try {
      json body = json::parse(req.body, nullptr, false);
      if (body.is_discarded()) throw Error(ErrorCode::InvalidConfig, "body is not valid JSON");
      auto id = runtime_.deploy(function_spec_from_json(body));
      res.status = 201;
      res.set_content(json{{"function_id", id.name}}.dump(), "application/json");
    } catch (const Error& e) {
      send_error(res, e.code() == ErrorCode::DuplicateName ? 409 : 400, e);
    }
  });
  mgmt_->Delete(R"(/functions/([^/]+))", [this, send_error](const httplib::Request& req, httplib::Response& res) {
    try {
      runtime_.remove(FunctionId{req.matches[1]});
      res.status = 204;
    } catch (const Error& e) {
      send_error(res, 404, e);
    }
  });
  mgmt_->Get("/functions", [this](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& spec : runtime_.list()) out.push_back(to_json(spec));
    res.set_content(out.dump(), "application/json");
  });
  mgmt_->Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
    auto counters_json = [](const BridgeCounters& c) {
      return json{{"invocations", c.invocations},
                  {"forwarded", c.forwarded},
                  {"dropped", c.dropped},
                  {"dropped_malformed", c.dropped_malformed},
                  {"failures", c.failures},
                  {"timeouts", c.timeouts},
                  {"crashes", c.crashes},
                  {"malformed_responses", c.malformed_responses}};
    };
    json bridges = json::array();
    for (const auto& b : bridges_.bridges()) {
      json entry = counters_json(b.counters);
      entry["bridge_id"] = b.id.value;
      entry["origin_filter"] = b.origin_filter.str();
      entry["function"] = b.function.name;
      entry["derived_topic"] = b.derived_topic.str();
      entry["refcount"] = b.refcount;
      bridges.push_back(entry);
    }
    json out = {{"totals", counters_json(bridges_.totals())}, {"bridges", bridges}};
    res.set_content(out.dump(), "application/json");
  });
}

}  // namespace lotus
