#pragma once

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "lotus/bridge.hpp"
#include "lotus/broker.hpp"
#include "lotus/function_runtime.hpp"
#include "lotus/protocol.hpp"

namespace httplib {
class Server;
}

namespace lotus {

struct ServerConfig {
  std::string host = "0.0.0.0";
  std::uint16_t port = wire::kDefaultPort;  // 0 picks an ephemeral port
  std::uint16_t mgmt_port = wire::kDefaultMgmtPort;
  std::size_t max_payload = 1024 * 1024;
  std::string log_level = "info";
  BridgeOptions bridge;
  // Deliveries queued for one slow connection beyond this are dropped.
  std::size_t max_outbound_bytes = 64 * 1024 * 1024;
};

/// Applies LOTUS_PORT, LOTUS_MGMT_PORT, LOTUS_MAX_PAYLOAD and LOTUS_LOG from
/// the environment, then the config file (if any) on top. The file holds
/// `key = value` lines with keys port, mgmt_port, max_payload, log (or their
/// LOTUS_* spellings); '#' starts a comment and string values may be quoted.
/// Throws Error{InvalidConfig}.
ServerConfig load_server_config(const std::optional<std::string>& config_path, ServerConfig base = {});

/// The broker process: NDJSON client sessions over TCP plus the HTTP
/// management API, wired to one Broker, FunctionRuntime and BridgeManager.
class Server {
 public:
  explicit Server(ServerConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds both listeners and starts serving. Throws std::system_error.
  void start();
  void stop();

  std::uint16_t port() const noexcept { return port_; }
  std::uint16_t mgmt_port() const noexcept { return mgmt_port_; }

  Broker& broker() noexcept { return broker_; }
  FunctionRuntime& runtime() noexcept { return runtime_; }
  BridgeManager& bridges() noexcept { return bridges_; }

  class Connection;

 private:
  void accept_loop();
  void setup_management();
  void release_session(const std::shared_ptr<Connection>& conn);
  void connection_finished(const std::shared_ptr<Connection>& conn);
  void bind_client(const std::shared_ptr<Connection>& conn, const ClientId& client_id);
  // Sinks run one publication at a time, so consecutive calls for the same
  // publication reuse one encoded line.
  std::string delivery_line(const Publication& pub);

  ServerConfig config_;
  Broker broker_;
  FunctionRuntime runtime_;
  BridgeManager bridges_;

  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::uint16_t mgmt_port_ = 0;
  std::thread accept_thread_;
  std::unique_ptr<httplib::Server> mgmt_;
  std::thread mgmt_thread_;
  bool running_ = false;

  std::mutex conn_mutex_;
  std::condition_variable conn_cv_;
  std::map<Connection*, std::shared_ptr<Connection>> connections_;
  std::map<ClientId, std::weak_ptr<Connection>> clients_;

  std::mutex delivery_cache_mutex_;
  PublicationId cached_pub_;
  std::string cached_line_;
};

}  // namespace lotus
