#include "svllm/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/core.h>

#include "svllm/error.hpp"

namespace svllm {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

double normalize_lon(double lon) {
  // [-180, 180]: only +180 needs folding.
  return lon == 180.0 ? -180.0 : lon;
}

}  // namespace

GeoPoint::GeoPoint(double lat, double lon, std::string id) : id_(std::move(id)) {
  if (!std::isfinite(lat) || !std::isfinite(lon) || lat < -90.0 || lat > 90.0 || lon < -180.0 ||
      lon > 180.0) {
    throw Error(ErrorKind::InvalidCoordinate,
                fmt::format("({}, {}) outside lat [-90, 90] / lon [-180, 180]", lat, lon));
  }
  lat_ = lat;
  lon_ = normalize_lon(lon);
}

void BBox::validate() const {
  if (!(min_lat <= max_lat) || !(min_lon <= max_lon)) {
    throw Error(ErrorKind::InvalidSpec,
                fmt::format("bbox min must not exceed max (lat {}..{}, lon {}..{}); "
                            "antimeridian-spanning boxes are unsupported",
                            min_lat, max_lat, min_lon, max_lon));
  }
  if (min_lat < -90.0 || max_lat > 90.0 || min_lon < -180.0 || max_lon > 180.0) {
    throw Error(ErrorKind::InvalidSpec, "bbox outside valid coordinate range");
  }
}

double haversine_distance(const GeoPoint& a, const GeoPoint& b) noexcept {
  const double phi1 = a.lat() * kDegToRad;
  const double phi2 = b.lat() * kDegToRad;
  const double s_lat = std::sin((b.lat() - a.lat()) * kDegToRad / 2.0);
  const double s_lon = std::sin((b.lon() - a.lon()) * kDegToRad / 2.0);
  const double h = s_lat * s_lat + std::cos(phi1) * std::cos(phi2) * (s_lon * s_lon);
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(std::min(1.0, h)));
}

BBox bounding_box(std::span<const GeoPoint> points) {
  if (points.empty()) throw Error(ErrorKind::EmptyInput, "bounding_box of zero points");
  BBox box{points[0].lat(), points[0].lat(), points[0].lon(), points[0].lon()};
  for (const auto& p : points.subspan(1)) {
    box.min_lat = std::min(box.min_lat, p.lat());
    box.max_lat = std::max(box.max_lat, p.lat());
    box.min_lon = std::min(box.min_lon, p.lon());
    box.max_lon = std::max(box.max_lon, p.lon());
  }
  return box;
}

GeoPoint destination_point(const GeoPoint& origin, double bearing_deg, double distance_m,
                           std::string id) {
  const double delta = distance_m / kEarthRadiusM;
  const double theta = bearing_deg * kDegToRad;
  const double phi1 = origin.lat() * kDegToRad;
  const double lambda1 = origin.lon() * kDegToRad;
  const double sin_phi2 =
      std::sin(phi1) * std::cos(delta) + std::cos(phi1) * std::sin(delta) * std::cos(theta);
  const double phi2 = std::asin(std::clamp(sin_phi2, -1.0, 1.0));
  const double lambda2 =
      lambda1 + std::atan2(std::sin(theta) * std::sin(delta) * std::cos(phi1),
                           std::cos(delta) - std::sin(phi1) * std::sin(phi2));
  double lon = std::remainder(lambda2 / kDegToRad, 360.0);  // [-180, 180]
  return GeoPoint(phi2 / kDegToRad, lon, std::move(id));
}

std::string geohash(const GeoPoint& p, int precision) {
  static constexpr char kBase32[] = "0123456789bcdefghjkmnpqrstuvwxyz";
  double lat_lo = -90.0, lat_hi = 90.0, lon_lo = -180.0, lon_hi = 180.0;
  std::string out;
  out.reserve(static_cast<std::size_t>(precision));
  bool even = true;
  int bit = 0;
  int ch = 0;
  while (static_cast<int>(out.size()) < precision) {
    if (even) {
      const double mid = (lon_lo + lon_hi) / 2;
      if (p.lon() >= mid) {
        ch = (ch << 1) | 1;
        lon_lo = mid;
      } else {
        ch <<= 1;
        lon_hi = mid;
      }
    } else {
      const double mid = (lat_lo + lat_hi) / 2;
      if (p.lat() >= mid) {
        ch = (ch << 1) | 1;
        lat_lo = mid;
      } else {
        ch <<= 1;
        lat_hi = mid;
      }
    }
    even = !even;
    if (++bit == 5) {
      out.push_back(kBase32[ch]);
      bit = 0;
      ch = 0;
    }
  }
  return out;
}

}  // namespace svllm
