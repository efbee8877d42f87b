#pragma once

#include <span>
#include <variant>
#include <vector>

namespace lotus {

inline constexpr double kEarthRadiusMeters = 6'371'000.0;

/// A WGS84-style coordinate in degrees. Construct through Location::make or
/// the checked constructor; an instance is always finite and in range.
class Location {
 public:
  Location() = default;
  Location(double lat, double lon);

  double lat() const noexcept { return lat_; }
  double lon() const noexcept { return lon_; }

  static bool valid(double lat, double lon) noexcept;

  friend bool operator==(const Location&, const Location&) = default;

 private:
  double lat_ = 0.0;
  double lon_ = 0.0;
};

struct Circle {
  Location center;
  double radius_m;

  friend bool operator==(const Circle&, const Circle&) = default;
};

/// Implicitly closed ring in the lat/lon plane.
struct Polygon {
  std::vector<Location> vertices;

  friend bool operator==(const Polygon&, const Polygon&) = default;
};

struct World {
  friend bool operator==(const World&, const World&) = default;
};

class Geofence {
 public:
  using Shape = std::variant<World, Circle, Polygon>;

  Geofence() = default;

  static Geofence world() { return Geofence{}; }
  // Both factories validate and throw Error{InvalidFence}.
  static Geofence circle(Location center, double radius_m);
  static Geofence polygon(std::vector<Location> vertices);

  const Shape& shape() const noexcept { return shape_; }
  bool is_world() const noexcept { return std::holds_alternative<World>(shape_); }

  friend bool operator==(const Geofence&, const Geofence&) = default;

 private:
  explicit Geofence(Shape shape) : shape_(std::move(shape)) {}
  Shape shape_{World{}};
};

struct GeoContext {
  Location location;
  Geofence fence;

  friend bool operator==(const GeoContext&, const GeoContext&) = default;
};

/// Great-circle distance on a sphere of radius kEarthRadiusMeters.
double haversine_distance(const Location& a, const Location& b) noexcept;

/// Boundary points are inside.
bool point_in_fence(const Location& p, const Geofence& fence) noexcept;

/// The double geo-context check: the publisher must lie in the subscriber's
/// fence and the subscriber must lie in the publication's fence.
bool geo_match(const GeoContext& pub_ctx, const Location& sub_loc, const Geofence& sub_fence) noexcept;

}  // namespace lotus
