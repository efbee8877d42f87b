#include <csignal>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "lotus/error.hpp"
#include "lotus/server.hpp"

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lotus-broker: geo-aware pub/sub broker with in-transit function processing"};
  std::optional<std::string> config_path;
  std::optional<std::uint16_t> port;
  std::optional<std::uint16_t> mgmt_port;
  std::optional<std::string> host;
  app.add_option("--config", config_path, "key = value config file (overrides LOTUS_* environment)");
  app.add_option("--port", port, "client protocol port (default 5789)");
  app.add_option("--mgmt-port", mgmt_port, "management HTTP port (default 8790)");
  app.add_option("--host", host, "listen address (default 0.0.0.0)");
  CLI11_PARSE(app, argc, argv);

  lotus::ServerConfig config;
  try {
    config = lotus::load_server_config(config_path);
  } catch (const lotus::Error& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  }
  if (port) config.port = *port;
  if (mgmt_port) config.mgmt_port = *mgmt_port;
  if (host) config.host = *host;

  auto level = spdlog::level::from_str(config.log_level);
  spdlog::set_level(level);

  lotus::Server server(config);
  try {
    server.start();
  } catch (const std::exception& e) {
    spdlog::error("cannot start: {}", e.what());
    return 1;
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  spdlog::info("shutting down");
  server.stop();
  return 0;
}
