#include "lotus/protocol.hpp"

#include "lotus/error.hpp"

namespace lotus::wire {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& reason) { throw Error(ErrorCode::DecodeError, reason); }

const json& field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) fail(std::string("missing field '") + key + "'");
  return *it;
}

std::string string_field(const json& j, const char* key) {
  const json& v = field(j, key);
  if (!v.is_string()) fail(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

double number_field(const json& j, const char* key) {
  const json& v = field(j, key);
  if (!v.is_number()) fail(std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

std::uint64_t id_field(const json& j, const char* key) {
  const json& v = field(j, key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    fail(std::string("field '") + key + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

Location location(double lat, double lon) {
  if (!Location::valid(lat, lon)) fail("lat/lon out of range");
  return Location(lat, lon);
}

Bytes payload_field(const json& j) {
  auto decoded = base64_decode(string_field(j, "payload_b64"));
  if (!decoded) fail("field 'payload_b64' is not valid base64");
  return std::move(*decoded);
}

FunctionRef function_from_json(const json& j) {
  if (!j.is_object()) fail("field 'function' must be an object");
  if (!j.contains("executor")) return FunctionId{string_field(j, "name")};
  try {
    return function_spec_from_json(j);
  } catch (const Error& e) {
    fail("invalid function spec: " + e.detail());
  }
}

json function_to_json(const FunctionRef& ref) {
  if (const auto* id = std::get_if<FunctionId>(&ref)) return {{"name", id->name}};
  return to_json(std::get<FunctionSpec>(ref));
}

json to_json_frame(const Frame& frame) {
  struct Visitor {
    json operator()(const Connect& f) const {
      json j = {{"type", "CONNECT"}, {"client_id", f.client_id}};
      if (f.location) {
        j["lat"] = f.location->lat();
        j["lon"] = f.location->lon();
      }
      return j;
    }
    json operator()(const ConnAck&) const { return {{"type", "CONNACK"}}; }
    json operator()(const PingLoc& f) const {
      return {{"type", "PINGLOC"}, {"lat", f.location.lat()}, {"lon", f.location.lon()}};
    }
    json operator()(const Subscribe& f) const {
      return {{"type", "SUBSCRIBE"}, {"filter", f.filter}, {"fence", fence_to_json(f.fence)}};
    }
    json operator()(const SubAck& f) const { return {{"type", "SUBACK"}, {"sub_id", f.sub_id}}; }
    json operator()(const Unsubscribe& f) const { return {{"type", "UNSUBSCRIBE"}, {"sub_id", f.sub_id}}; }
    json operator()(const Publish& f) const {
      return {{"type", "PUBLISH"}, {"topic", f.topic}, {"payload_b64", base64_encode(f.payload)},
              {"fence", fence_to_json(f.fence)}};
    }
    json operator()(const Delivery& f) const {
      return {{"type", "DELIVERY"}, {"topic", f.topic}, {"payload_b64", base64_encode(f.payload)},
              {"pub_id", f.pub_id}, {"ts", f.ts}};
    }
    json operator()(const FSub& f) const {
      return {{"type", "FSUB"}, {"filter", f.filter}, {"fence", fence_to_json(f.fence)},
              {"function", function_to_json(f.function)}};
    }
    json operator()(const FSubAck& f) const {
      return {{"type", "FSUBACK"}, {"fsub_id", f.fsub_id}, {"derived_topic", f.derived_topic}};
    }
    json operator()(const FUnsub& f) const { return {{"type", "FUNSUB"}, {"fsub_id", f.fsub_id}}; }
    json operator()(const ErrorFrame& f) const { return {{"type", "ERROR"}, {"code", f.code}, {"detail", f.detail}}; }
  };
  return std::visit(Visitor{}, frame);
}

}  // namespace

std::string_view frame_type(const Frame& frame) noexcept {
  static constexpr std::string_view kNames[] = {"CONNECT", "CONNACK",  "PINGLOC", "SUBSCRIBE",
                                                "SUBACK",  "UNSUBSCRIBE", "PUBLISH", "DELIVERY",
                                                "FSUB",    "FSUBACK",  "FUNSUB",  "ERROR"};
  return kNames[frame.index()];
}

json fence_to_json(const Geofence& fence) {
  struct Visitor {
    json operator()(const World&) const { return {{"shape", "world"}}; }
    json operator()(const Circle& c) const {
      return {{"shape", "circle"}, {"lat", c.center.lat()}, {"lon", c.center.lon()}, {"radius_m", c.radius_m}};
    }
    json operator()(const Polygon& p) const {
      json vertices = json::array();
      for (const auto& v : p.vertices) vertices.push_back({v.lat(), v.lon()});
      return {{"shape", "polygon"}, {"vertices", vertices}};
    }
  };
  return std::visit(Visitor{}, fence.shape());
}

Geofence fence_from_json(const json& j) {
  if (!j.is_object()) fail("fence must be an object");
  std::string shape = string_field(j, "shape");
  try {
    if (shape == "world") return Geofence::world();
    if (shape == "circle") {
      return Geofence::circle(location(number_field(j, "lat"), number_field(j, "lon")), number_field(j, "radius_m"));
    }
    if (shape == "polygon") {
      const json& vertices = field(j, "vertices");
      if (!vertices.is_array()) fail("fence vertices must be an array");
      std::vector<Location> points;
      for (const auto& v : vertices) {
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
          fail("fence vertex must be [lat, lon]");
        }
        points.push_back(location(v[0].get<double>(), v[1].get<double>()));
      }
      return Geofence::polygon(std::move(points));
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DecodeError) throw;
    fail("invalid fence: " + e.detail());
  }
  fail("unknown fence shape '" + shape + "'");
}

Frame decode_frame(std::string_view line) {
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded()) fail("line is not valid JSON");
  if (!j.is_object()) fail("frame must be a JSON object");
  std::string type = string_field(j, "type");

  if (type == "CONNECT") {
    Connect f{string_field(j, "client_id"), std::nullopt};
    bool has_lat = j.contains("lat");
    if (has_lat != j.contains("lon")) fail("CONNECT needs both lat and lon or neither");
    if (has_lat) f.location = location(number_field(j, "lat"), number_field(j, "lon"));
    if (f.client_id.empty()) fail("client_id must not be empty");
    return f;
  }
  if (type == "CONNACK") return ConnAck{};
  if (type == "PINGLOC") return PingLoc{location(number_field(j, "lat"), number_field(j, "lon"))};
  if (type == "SUBSCRIBE") return Subscribe{string_field(j, "filter"), fence_from_json(field(j, "fence"))};
  if (type == "SUBACK") return SubAck{id_field(j, "sub_id")};
  if (type == "UNSUBSCRIBE") return Unsubscribe{id_field(j, "sub_id")};
  if (type == "PUBLISH") {
    std::string topic = string_field(j, "topic");
    Bytes payload = payload_field(j);
    return Publish{std::move(topic), std::move(payload), fence_from_json(field(j, "fence"))};
  }
  if (type == "DELIVERY") {
    const json& ts = field(j, "ts");
    if (!ts.is_number_integer()) fail("field 'ts' must be an integer");
    std::string topic = string_field(j, "topic");
    Bytes payload = payload_field(j);
    return Delivery{std::move(topic), std::move(payload), string_field(j, "pub_id"), ts.get<std::int64_t>()};
  }
  if (type == "FSUB") {
    std::string filter = string_field(j, "filter");
    Geofence fence = fence_from_json(field(j, "fence"));
    return FSub{std::move(filter), std::move(fence), function_from_json(field(j, "function"))};
  }
  if (type == "FSUBACK") return FSubAck{id_field(j, "fsub_id"), string_field(j, "derived_topic")};
  if (type == "FUNSUB") return FUnsub{id_field(j, "fsub_id")};
  if (type == "ERROR") return ErrorFrame{string_field(j, "code"), string_field(j, "detail")};
  fail("unknown type '" + type + "'");
}

std::string encode_frame(const Frame& frame) {
  return to_json_frame(frame).dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
}

}  // namespace lotus::wire
