#include <charconv>
#include <set>

#include "lotus/function_runtime.hpp"

namespace lotus::builtin {
namespace {

using nlohmann::json;

json parse_or_discarded(const Bytes& payload) { return json::parse(payload, nullptr, false); }

bool needs_quoting(std::string_view s) { return s.find_first_of(",\"\n\r") != std::string_view::npos; }

void append_csv_field(std::string& out, std::string_view s) {
  if (!needs_quoting(s)) {
    out += s;
    return;
  }
  out.push_back('"');
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
}

std::string shortest_decimal(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// nullopt for values that have no CSV rendering (nested arrays/objects).
std::optional<std::string> render_scalar(const json& v) {
  switch (v.type()) {
    case json::value_t::null: return std::string{};
    case json::value_t::boolean: return v.get<bool>() ? "true" : "false";
    case json::value_t::number_integer: return std::to_string(v.get<std::int64_t>());
    case json::value_t::number_unsigned: return std::to_string(v.get<std::uint64_t>());
    case json::value_t::number_float: return shortest_decimal(v.get<double>());
    case json::value_t::string: return v.get<std::string>();
    default: return std::nullopt;
  }
}

}  // namespace

Outcome identity(const Bytes& payload) { return Forward{payload}; }

Outcome threshold_filter(const Bytes& payload, const ThresholdConfig& config) {
  json doc = parse_or_discarded(payload);
  if (!doc.is_object()) return Drop{true};
  auto it = doc.find(config.field);
  if (it == doc.end() || !it->is_number()) return Drop{true};
  double value = it->get<double>();
  bool pass = false;
  switch (config.op) {
    case Comparison::Greater: pass = value > config.threshold; break;
    case Comparison::GreaterEqual: pass = value >= config.threshold; break;
    case Comparison::Less: pass = value < config.threshold; break;
    case Comparison::LessEqual: pass = value <= config.threshold; break;
  }
  if (pass) return Forward{payload};
  return Drop{};
}

Outcome json_to_csv(const Bytes& payload) {
  json doc = parse_or_discarded(payload);
  if (!doc.is_array()) return Failure{FailureReason::MalformedResponse, "json_to_csv expects a JSON array"};

  std::set<std::string> keys;
  for (const auto& row : doc) {
    if (!row.is_object()) return Failure{FailureReason::MalformedResponse, "array element is not an object"};
    for (const auto& [k, v] : row.items()) {
      if (v.is_structured()) return Failure{FailureReason::MalformedResponse, "nested value under key " + k};
      keys.insert(k);
    }
  }

  std::string out;
  bool first = true;
  for (const auto& k : keys) {
    if (!first) out.push_back(',');
    first = false;
    append_csv_field(out, k);
  }
  out.push_back('\n');
  for (const auto& row : doc) {
    first = true;
    for (const auto& k : keys) {
      if (!first) out.push_back(',');
      first = false;
      auto it = row.find(k);
      if (it == row.end()) continue;
      append_csv_field(out, *render_scalar(*it));
    }
    out.push_back('\n');
  }
  return Forward{std::move(out)};
}

Outcome extract_keys(const Bytes& payload, const ExtractKeysConfig& config) {
  json doc = parse_or_discarded(payload);
  if (!doc.is_object()) return Drop{true};
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& key : config.keys) {
    auto it = doc.find(key);
    if (it != doc.end()) out[key] = *it;
  }
  if (out.empty()) return Drop{};
  return Forward{out.dump()};
}

}  // namespace lotus::builtin
