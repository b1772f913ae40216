#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "svllm/error.hpp"
#include "svllm/geo.hpp"
#include "svllm/http.hpp"

namespace svllm {

struct Address {
  std::string display_name;
  std::vector<std::pair<std::string, std::string>> components;  // provider order
  std::string provider;
  std::string retrieved_at;  // UTC, ISO-8601
};

struct NearbyPlace {
  std::string name;
  GeoPoint location;
  double distance_m = 0.0;
  std::optional<std::string> category;
};

enum class ImageStatus { Available, Missing };

struct ImageRef {
  ImageStatus status = ImageStatus::Missing;
  std::string local_path;  // relative to the cache dir; empty when Missing
  std::optional<GeoPoint> capture_point;
  double offset_m = 0.0;
  double heading = 0.0;
  std::string content_hash;
  int probes_tried = 0;

  bool available() const noexcept { return status == ImageStatus::Available; }
};

struct GeoContext {
  GeoPoint point;
  Address address;
  std::vector<NearbyPlace> nearby;
  ImageRef image;
};

/// OSM element with tags, as returned by an Overpass `out center` query.
struct TaggedElement {
  GeoPoint location;
  std::map<std::string, std::string> tags;
};

struct ProviderEndpoints {
  std::string nominatim = "https://nominatim.openstreetmap.org";
  std::string overpass = "https://overpass-api.de/api";
  std::string streetview = "https://maps.googleapis.com/maps/api/streetview";
};

struct RateLimits {
  double geocode_rps = 1.0;
  double places_rps = 2.0;
  double imagery_rps = 10.0;
};

struct RetrievalConfig {
  double places_radius_m = 100'000.0;
  std::size_t places_limit = 10;
  std::size_t places_overfetch = 5;        // server-side `out body` cap = limit * overfetch
  std::optional<std::string> places_tag;   // extra tag key filter, e.g. "amenity"
  double svi_radius_m = 40.0;
  std::size_t resample_probes = 8;
  int image_width = 640;
  int image_height = 640;
  double heading = 0.0;
  RateLimits rate_limits;
  ProviderEndpoints endpoints;
  ProviderMode mode = ProviderMode::Replay;
  std::filesystem::path cache_dir = "cache";
  std::filesystem::path fixture_dir = "fixtures";
  int max_attempts = 3;
  int backoff_ms = 500;
  double timeout_s = 30.0;
  std::uint64_t seed = 0;
  std::size_t workers = 4;
  std::string streetview_key;  // from SVLLM_STREETVIEW_KEY; never persisted

  /// Throws ConfigError when radii are not positive, limits are zero or no
  /// cache directory is set.
  void validate() const;
};

// Request builders. Deterministic in (point, cfg); fixtures are keyed on them.
HttpRequest reverse_geocode_request(const GeoPoint& point, const RetrievalConfig& cfg);
HttpRequest nearby_places_request(const GeoPoint& point, const RetrievalConfig& cfg);
HttpRequest streetview_metadata_request(const GeoPoint& probe, const RetrievalConfig& cfg);
HttpRequest streetview_image_request(const GeoPoint& probe, const RetrievalConfig& cfg);
HttpRequest tagged_elements_request(const GeoPoint& point, double radius_m,
                                    const RetrievalConfig& cfg);

/// Overpass query text sent by nearby_places_request.
std::string nearby_places_query(const GeoPoint& point, const RetrievalConfig& cfg);

// Response parsers. Malformed payloads throw ProviderError.
Address parse_reverse_geocode(const std::string& body);
/// Named nodes within `radius_m`, sorted by (distance, name), truncated to `limit`.
std::vector<NearbyPlace> parse_nearby_places(const std::string& body, const GeoPoint& origin,
                                             double radius_m, std::size_t limit);
std::vector<TaggedElement> parse_tagged_elements(const std::string& body);

/// Jittered street-view probes: resample_probes points on two rings (half
/// radius, full radius) at uniform angles, with a phase derived from
/// (seed, sample id). Every probe lies strictly inside the buffer.
std::vector<GeoPoint> jitter_probes(const GeoPoint& point, const RetrievalConfig& cfg);

/// Persistent JSON cache at `<dir>/<op>/<geohash5>/<key>.json`. The key hashes
/// the operation, the coordinates rounded to 6 decimals, and the parameters.
class ResultCache {
 public:
  explicit ResultCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::filesystem::path path_for(std::string_view op, const GeoPoint& point,
                                 std::string_view params) const;
  std::optional<nlohmann::json> get(std::string_view op, const GeoPoint& point,
                                    std::string_view params) const;
  void put(std::string_view op, const GeoPoint& point, std::string_view params,
           const nlohmann::json& value) const;
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
};

/// Composes Replay/Record/Live around the live HTTP stack with per-provider
/// rate limits. `live` overrides the network transport (tests).
std::shared_ptr<FixtureTransport> make_provider_transport(const RetrievalConfig& cfg,
                                                          std::shared_ptr<Transport> live = nullptr);

/// Geographic retrieval layer. Thread-safe: distinct points may be fetched
/// concurrently; rate limits are enforced by the shared transport.
class GeoRetriever {
 public:
  GeoRetriever(RetrievalConfig cfg, std::shared_ptr<Transport> transport);

  Address reverse_geocode(const GeoPoint& point);
  std::vector<NearbyPlace> nearby_places(const GeoPoint& point);
  ImageRef fetch_street_view(const GeoPoint& point);
  GeoContext build_geo_context(const GeoPoint& point);
  std::vector<TaggedElement> tagged_elements(const GeoPoint& point, double radius_m);

  const RetrievalConfig& config() const noexcept { return cfg_; }
  /// Requests handed to the transport (cache hits excluded).
  std::size_t requests_sent() const noexcept { return requests_.load(); }

 private:
  HttpResponse send_with_retry(const HttpRequest& request);

  RetrievalConfig cfg_;
  std::shared_ptr<Transport> transport_;
  ResultCache cache_;
  std::atomic<std::size_t> requests_{0};
};

struct ContextOutcome {
  std::string id;
  std::optional<GeoContext> context;
  std::string error;  // set when context is empty
  std::optional<ErrorKind> error_kind;
};

/// Fetches contexts for many points with up to `workers` threads. Results are
/// returned in input order; per-point failures are captured, not thrown.
std::vector<ContextOutcome> build_geo_contexts(GeoRetriever& retriever,
                                               std::span<const GeoPoint> points,
                                               std::size_t workers);

void to_json(nlohmann::json& j, const Address& v);
void from_json(const nlohmann::json& j, Address& v);
void to_json(nlohmann::json& j, const NearbyPlace& v);
void from_json(const nlohmann::json& j, NearbyPlace& v);
void to_json(nlohmann::json& j, const ImageRef& v);
void from_json(const nlohmann::json& j, ImageRef& v);
void to_json(nlohmann::json& j, const GeoContext& v);
void from_json(const nlohmann::json& j, GeoContext& v);
void to_json(nlohmann::json& j, const GeoPoint& v);
void from_json(const nlohmann::json& j, GeoPoint& v);

std::string utc_timestamp();

}  // namespace svllm
