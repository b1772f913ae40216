#pragma once

#include <span>
#include <string>

namespace svllm {

/// Mean Earth radius used for every great-circle computation.
inline constexpr double kEarthRadiusM = 6'371'000.0;

/// WGS84 coordinate with an opaque sample identifier. Longitude is normalized
/// to [-180, 180) on construction; out-of-range or non-finite input throws
/// Error(InvalidCoordinate).
class GeoPoint {
 public:
  GeoPoint() = default;
  GeoPoint(double lat, double lon, std::string id = {});

  double lat() const noexcept { return lat_; }
  double lon() const noexcept { return lon_; }
  const std::string& id() const noexcept { return id_; }

  /// Same coordinates (ids are ignored).
  bool same_location(const GeoPoint& other) const noexcept {
    return lat_ == other.lat_ && lon_ == other.lon_;
  }

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;

 private:
  double lat_ = 0.0;
  double lon_ = 0.0;
  std::string id_;
};

struct BBox {
  double min_lat = 0.0;
  double max_lat = 0.0;
  double min_lon = 0.0;
  double max_lon = 0.0;

  bool contains(const GeoPoint& p) const noexcept {
    return p.lat() >= min_lat && p.lat() <= max_lat && p.lon() >= min_lon && p.lon() <= max_lon;
  }
  GeoPoint center() const { return GeoPoint((min_lat + max_lat) / 2, (min_lon + max_lon) / 2); }

  /// Throws InvalidSpec if min > max on either axis or values are out of range.
  void validate() const;

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Great-circle distance in meters (haversine, spherical Earth).
double haversine_distance(const GeoPoint& a, const GeoPoint& b) noexcept;

/// Tight envelope of the points. Throws EmptyInput on an empty list.
BBox bounding_box(std::span<const GeoPoint> points);

/// Point reached by travelling `distance_m` from `origin` along the initial
/// bearing `bearing_deg` (clockwise from north) on the sphere.
GeoPoint destination_point(const GeoPoint& origin, double bearing_deg, double distance_m,
                           std::string id = {});

/// Standard base-32 geohash of the given precision.
std::string geohash(const GeoPoint& p, int precision);

}  // namespace svllm
