#include <charconv>
#include <cstdlib>
#include <fstream>

#include "lotus/error.hpp"
#include "lotus/server.hpp"

namespace lotus {
namespace {

std::string trim(std::string_view s) {
  auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  auto end = s.find_last_not_of(" \t\r");
  return std::string(s.substr(begin, end - begin + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || p != value.data() + value.size()) {
    throw Error(ErrorCode::InvalidConfig, key + ": not a valid number: " + value);
  }
  return out;
}

void apply(ServerConfig& cfg, std::string key, const std::string& value) {
  if (key.starts_with("LOTUS_")) key = key.substr(6);
  for (auto& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (key == "port") {
    cfg.port = parse_number<std::uint16_t>(key, value);
  } else if (key == "mgmt_port") {
    cfg.mgmt_port = parse_number<std::uint16_t>(key, value);
  } else if (key == "max_payload") {
    cfg.max_payload = parse_number<std::size_t>(key, value);
    if (cfg.max_payload == 0) throw Error(ErrorCode::InvalidConfig, "max_payload must be positive");
  } else if (key == "log") {
    cfg.log_level = value;
  } else if (key == "host") {
    cfg.host = value;
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown config key " + key);
  }
}

}  // namespace

ServerConfig load_server_config(const std::optional<std::string>& config_path, ServerConfig base) {
  for (const char* name : {"LOTUS_PORT", "LOTUS_MGMT_PORT", "LOTUS_MAX_PAYLOAD", "LOTUS_LOG"}) {
    if (const char* v = std::getenv(name)) apply(base, name, v);
  }
  if (!config_path) return base;

  std::ifstream in(*config_path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open config file " + *config_path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::string text = trim(line);
    if (text.empty() || text.front() == '[') continue;  // blank line or TOML table header
    auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::InvalidConfig, *config_path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string value = trim(std::string_view(text).substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    apply(base, trim(std::string_view(text).substr(0, eq)), value);
  }
  return base;
}

}  // namespace lotus
