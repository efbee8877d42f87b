#include "lotus/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "lotus/error.hpp"

namespace lotus {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kEdgeEpsilon = 1e-12;

double cross(const Location& o, const Location& a, const Location& b) noexcept {
  return (a.lon() - o.lon()) * (b.lat() - o.lat()) - (a.lat() - o.lat()) * (b.lon() - o.lon());
}

bool on_segment(const Location& p, const Location& a, const Location& b) noexcept {
  if (std::abs(cross(a, b, p)) > kEdgeEpsilon) return false;
  return p.lon() >= std::min(a.lon(), b.lon()) - kEdgeEpsilon &&
         p.lon() <= std::max(a.lon(), b.lon()) + kEdgeEpsilon &&
         p.lat() >= std::min(a.lat(), b.lat()) - kEdgeEpsilon &&
         p.lat() <= std::max(a.lat(), b.lat()) + kEdgeEpsilon;
}

int orientation(const Location& a, const Location& b, const Location& c) noexcept {
  double v = cross(a, b, c);
  if (std::abs(v) <= kEdgeEpsilon) return 0;
  return v > 0 ? 1 : -1;
}

bool segments_intersect(const Location& p1, const Location& p2, const Location& q1, const Location& q2) noexcept {
  int o1 = orientation(p1, p2, q1);
  int o2 = orientation(p1, p2, q2);
  int o3 = orientation(q1, q2, p1);
  int o4 = orientation(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(q1, p1, p2)) return true;
  if (o2 == 0 && on_segment(q2, p1, p2)) return true;
  if (o3 == 0 && on_segment(p1, q1, q2)) return true;
  if (o4 == 0 && on_segment(p2, q1, q2)) return true;
  return false;
}

bool self_intersecting(std::span<const Location> v) noexcept {
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      // Adjacent edges share a vertex; the first and last edge are adjacent too.
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n])) return true;
    }
  }
  return false;
}

bool in_polygon(const Location& p, std::span<const Location> v) noexcept {
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (on_segment(p, v[i], v[(i + 1) % n])) return true;
  }
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Location& a = v[i];
    const Location& b = v[j];
    if ((a.lat() > p.lat()) != (b.lat() > p.lat())) {
      double lon_at = (b.lon() - a.lon()) * (p.lat() - a.lat()) / (b.lat() - a.lat()) + a.lon();
      if (p.lon() < lon_at) inside = !inside;
    }
  }
  return inside;
}

}  // namespace

Location::Location(double lat, double lon) : lat_(lat), lon_(lon) {
  if (!valid(lat, lon)) {
    throw Error(ErrorCode::InvalidArgument,
                "location out of range: (" + std::to_string(lat) + ", " + std::to_string(lon) + ")");
  }
}

bool Location::valid(double lat, double lon) noexcept {
  return std::isfinite(lat) && std::isfinite(lon) && lat >= -90.0 && lat <= 90.0 && lon >= -180.0 &&
         lon <= 180.0;
}

Geofence Geofence::circle(Location center, double radius_m) {
  if (!std::isfinite(radius_m) || radius_m <= 0.0) {
    throw Error(ErrorCode::InvalidFence, "circle radius must be positive and finite");
  }
  return Geofence{Circle{center, radius_m}};
}

Geofence Geofence::polygon(std::vector<Location> vertices) {
  if (vertices.size() < 3) throw Error(ErrorCode::InvalidFence, "polygon needs at least 3 vertices");
  if (vertices.front() == vertices.back()) {
    throw Error(ErrorCode::InvalidFence, "polygon closure is implicit; do not repeat the first vertex");
  }
  auto [min_lon, max_lon] = std::minmax_element(vertices.begin(), vertices.end(), [](auto& a, auto& b) {
    return a.lon() < b.lon();
  });
  if (max_lon->lon() - min_lon->lon() > 180.0) {
    throw Error(ErrorCode::InvalidFence, "polygons spanning the antimeridian are unsupported");
  }
  for (const auto& v : vertices) {
    if (std::abs(v.lat()) == 90.0) throw Error(ErrorCode::InvalidFence, "polygons touching a pole are unsupported");
  }
  if (self_intersecting(vertices)) throw Error(ErrorCode::InvalidFence, "polygon is self-intersecting");
  return Geofence{Polygon{std::move(vertices)}};
}

double haversine_distance(const Location& a, const Location& b) noexcept {
  const double lat1 = a.lat() * kDegToRad;
  const double lat2 = b.lat() * kDegToRad;
  const double dlat = lat2 - lat1;
  const double dlon = (b.lon() - a.lon()) * kDegToRad;
  const double s1 = std::sin(dlat / 2);
  const double s2 = std::sin(dlon / 2);
  const double h = std::min(1.0, s1 * s1 + std::cos(lat1) * std::cos(lat2) * s2 * s2);
  return 2.0 * kEarthRadiusMeters * std::asin(std::sqrt(h));
}

bool point_in_fence(const Location& p, const Geofence& fence) noexcept {
  struct Visitor {
    const Location& p;
    bool operator()(const World&) const noexcept { return true; }
    bool operator()(const Circle& c) const noexcept { return haversine_distance(p, c.center) <= c.radius_m; }
    bool operator()(const Polygon& poly) const noexcept { return in_polygon(p, poly.vertices); }
  };
  return std::visit(Visitor{p}, fence.shape());
}

bool geo_match(const GeoContext& pub_ctx, const Location& sub_loc, const Geofence& sub_fence) noexcept {
  return point_in_fence(pub_ctx.location, sub_fence) && point_in_fence(sub_loc, pub_ctx.fence);
}

}  // namespace lotus
