#include "svllm/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <thread>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "svllm/hashing.hpp"

namespace svllm {

namespace fs = std::filesystem;
using nlohmann::json;

void RetrievalConfig::validate() const {
  if (!(places_radius_m > 0) || !(svi_radius_m > 0)) {
    throw Error(ErrorKind::ConfigError, "retrieval radii must be positive");
  }
  if (places_limit == 0 || places_overfetch == 0) {
    throw Error(ErrorKind::ConfigError, "places_limit and places_overfetch must be positive");
  }
  if (max_attempts < 1) throw Error(ErrorKind::ConfigError, "max_attempts must be >= 1");
  if (cache_dir.empty()) throw Error(ErrorKind::ConfigError, "cache_dir is required");
}

// ---------------------------------------------------------------------------
// Requests

HttpRequest reverse_geocode_request(const GeoPoint& point, const RetrievalConfig& cfg) {
  HttpRequest r;
  r.provider = Provider::Geocode;
  r.url = fmt::format("{}/reverse?format=jsonv2&lat={:.6f}&lon={:.6f}&addressdetails=1",
                      cfg.endpoints.nominatim, point.lat(), point.lon());
  return r;
}

std::string nearby_places_query(const GeoPoint& point, const RetrievalConfig& cfg) {
  const std::string tag = cfg.places_tag ? fmt::format("[\"{}\"]", *cfg.places_tag) : "";
  return fmt::format("[out:json];node(around:{},{:.6f},{:.6f})[\"name\"]{};out body {};",
                     cfg.places_radius_m, point.lat(), point.lon(), tag,
                     cfg.places_limit * cfg.places_overfetch);
}

HttpRequest nearby_places_request(const GeoPoint& point, const RetrievalConfig& cfg) {
  HttpRequest r;
  r.provider = Provider::Places;
  r.url = fmt::format("{}/interpreter?data={}", cfg.endpoints.overpass,
                      url_encode(nearby_places_query(point, cfg)));
  return r;
}

HttpRequest streetview_metadata_request(const GeoPoint& probe, const RetrievalConfig& cfg) {
  HttpRequest r;
  r.provider = Provider::Imagery;
  r.url = fmt::format("{}/metadata?location={:.6f},{:.6f}&radius={}&size={}x{}&heading={}&key={}",
                      cfg.endpoints.streetview, probe.lat(), probe.lon(), cfg.svi_radius_m,
                      cfg.image_width, cfg.image_height, cfg.heading, cfg.streetview_key);
  return r;
}

HttpRequest streetview_image_request(const GeoPoint& probe, const RetrievalConfig& cfg) {
  HttpRequest r;
  r.provider = Provider::Imagery;
  r.url = fmt::format("{}?location={:.6f},{:.6f}&size={}x{}&heading={}&radius={}&key={}",
                      cfg.endpoints.streetview, probe.lat(), probe.lon(), cfg.image_width,
                      cfg.image_height, cfg.heading, cfg.svi_radius_m, cfg.streetview_key);
  return r;
}

HttpRequest tagged_elements_request(const GeoPoint& point, double radius_m,
                                    const RetrievalConfig& cfg) {
  const std::string query = fmt::format(
      "[out:json];nwr(around:{},{:.6f},{:.6f})"
      "[~\"^(amenity|building|craft|healthcare|landuse|leisure|man_made|natural|office|shop|"
      "tourism)$\"~\".\"];out center;",
      radius_m, point.lat(), point.lon());
  HttpRequest r;
  r.provider = Provider::Places;
  r.url = fmt::format("{}/interpreter?data={}", cfg.endpoints.overpass, url_encode(query));
  return r;
}

// ---------------------------------------------------------------------------
// Parsers

namespace {

template <typename F>
auto guarded_parse(std::string_view what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ProviderError, fmt::format("malformed {} response: {}", what, e.what()));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidCoordinate) {
      throw Error(ErrorKind::ProviderError, fmt::format("{} response: {}", what, e.what()));
    }
    throw;
  }
}

std::optional<std::string> place_category(const json& tags) {
  static constexpr std::string_view kKeys[] = {"amenity", "shop",    "tourism", "leisure",
                                                "office",  "historic", "railway", "public_transport",
                                                "place"};
  for (auto key : kKeys) {
    const auto it = tags.find(std::string(key));
    if (it != tags.end() && it->is_string()) return fmt::format("{}={}", key, it->get<std::string>());
  }
  return std::nullopt;
}

std::optional<std::pair<double, double>> element_coordinates(const json& e) {
  if (e.contains("lat") && e.contains("lon")) {
    return std::pair{e.at("lat").get<double>(), e.at("lon").get<double>()};
  }
  if (e.contains("center")) {
    const auto& c = e.at("center");
    return std::pair{c.at("lat").get<double>(), c.at("lon").get<double>()};
  }
  return std::nullopt;
}

std::string element_id(const json& e) {
  return fmt::format("{}/{}", e.value("type", "node"), e.contains("id") ? e.at("id").dump() : "?");
}

}  // namespace

Address parse_reverse_geocode(const std::string& body) {
  return guarded_parse("reverse-geocode", [&] {
    const auto doc = nlohmann::ordered_json::parse(body);
    if (doc.contains("error")) {
      throw Error(ErrorKind::ProviderError, "reverse geocoder: " + doc.at("error").dump());
    }
    Address a;
    a.display_name = doc.value("display_name", "");
    if (a.display_name.empty()) {
      throw Error(ErrorKind::ProviderError, "reverse geocoder returned no display_name");
    }
    if (doc.contains("address")) {
      for (const auto& [k, v] : doc.at("address").items()) {
        a.components.emplace_back(k, v.is_string() ? v.get<std::string>() : v.dump());
      }
    }
    a.provider = "nominatim";
    return a;
  });
}

std::vector<NearbyPlace> parse_nearby_places(const std::string& body, const GeoPoint& origin,
                                             double radius_m, std::size_t limit) {
  return guarded_parse("places", [&] {
    const auto doc = json::parse(body);
    std::vector<NearbyPlace> places;
    for (const auto& e : doc.at("elements")) {
      const auto coords = element_coordinates(e);
      if (!coords || !e.contains("tags")) continue;
      const auto& tags = e.at("tags");
      const auto name = tags.find("name");
      if (name == tags.end() || !name->is_string()) continue;
      NearbyPlace p;
      p.name = name->get<std::string>();
      p.location = GeoPoint(coords->first, coords->second, element_id(e));
      p.distance_m = haversine_distance(origin, p.location);
      if (p.distance_m > radius_m) continue;
      p.category = place_category(tags);
      places.push_back(std::move(p));
    }
    std::sort(places.begin(), places.end(), [](const NearbyPlace& a, const NearbyPlace& b) {
      return std::tie(a.distance_m, a.name, a.location.id()) <
             std::tie(b.distance_m, b.name, b.location.id());
    });
    if (places.size() > limit) places.resize(limit);
    return places;
  });
}

std::vector<TaggedElement> parse_tagged_elements(const std::string& body) {
  return guarded_parse("tagged-elements", [&] {
    const auto doc = json::parse(body);
    std::vector<TaggedElement> out;
    for (const auto& e : doc.at("elements")) {
      const auto coords = element_coordinates(e);
      if (!coords) continue;
      TaggedElement t;
      t.location = GeoPoint(coords->first, coords->second, element_id(e));
      if (e.contains("tags")) {
        for (const auto& [k, v] : e.at("tags").items()) {
          if (v.is_string()) t.tags.emplace(k, v.get<std::string>());
        }
      }
      out.push_back(std::move(t));
    }
    return out;
  });
}

// ---------------------------------------------------------------------------

std::vector<GeoPoint> jitter_probes(const GeoPoint& point, const RetrievalConfig& cfg) {
  const std::size_t total = cfg.resample_probes;
  std::vector<GeoPoint> probes;
  if (total == 0) return probes;
  const std::string key =
      point.id().empty() ? fmt::format("{:.6f},{:.6f}", point.lat(), point.lon()) : point.id();
  const double phase = static_cast<double>(mix_seed(cfg.seed, fnv1a64(key)) % 3'600'000) / 10'000.0;

  const std::size_t inner = (total + 1) / 2;
  const std::size_t outer = total - inner;
  // The outer ring sits a hair inside the buffer so round-off never pushes it out.
  const double outer_radius = cfg.svi_radius_m * (1.0 - 1e-9);
  probes.reserve(total);
  for (std::size_t i = 0; i < inner; ++i) {
    const double bearing = phase + 360.0 * static_cast<double>(i) / static_cast<double>(inner);
    probes.push_back(destination_point(point, bearing, cfg.svi_radius_m / 2.0,
                                       fmt::format("{}#probe{}", point.id(), i)));
  }
  for (std::size_t i = 0; i < outer; ++i) {
    const double bearing = phase + 180.0 / static_cast<double>(outer) +
                           360.0 * static_cast<double>(i) / static_cast<double>(outer);
    probes.push_back(destination_point(point, bearing, outer_radius,
                                       fmt::format("{}#probe{}", point.id(), inner + i)));
  }
  return probes;
}

// ---------------------------------------------------------------------------

fs::path ResultCache::path_for(std::string_view op, const GeoPoint& point,
                               std::string_view params) const {
  const std::string key =
      sha256_hex(fmt::format("{}|{:.6f}|{:.6f}|{}", op, point.lat(), point.lon(), params));
  return dir_ / std::string(op) / geohash(point, 5) / (key + ".json");
}

std::optional<json> ResultCache::get(std::string_view op, const GeoPoint& point,
                                     std::string_view params) const {
  const auto path = path_for(op, point, params);
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  try {
    return json::parse(read_file(path));
  } catch (const json::exception&) {
    return std::nullopt;  // truncated or foreign file: refetch
  }
}

void ResultCache::put(std::string_view op, const GeoPoint& point, std::string_view params,
                      const json& value) const {
  write_file_atomic(path_for(op, point, params), value.dump() + "\n");
}

std::shared_ptr<FixtureTransport> make_provider_transport(const RetrievalConfig& cfg,
                                                          std::shared_ptr<Transport> live) {
  if (!live) {
    live = std::make_shared<HttpTransport>(
        std::chrono::milliseconds(static_cast<long long>(cfg.timeout_s * 1000)));
  }
  std::map<Provider, std::shared_ptr<RateLimiter>> limiters{
      {Provider::Geocode, std::make_shared<RateLimiter>(cfg.rate_limits.geocode_rps)},
      {Provider::Places, std::make_shared<RateLimiter>(cfg.rate_limits.places_rps)},
      {Provider::Imagery, std::make_shared<RateLimiter>(cfg.rate_limits.imagery_rps)},
  };
  auto limited = std::make_shared<RateLimitedTransport>(std::move(live), std::move(limiters));
  return std::make_shared<FixtureTransport>(cfg.mode, FixtureStore(cfg.fixture_dir),
                                            std::move(limited));
}

// ---------------------------------------------------------------------------

GeoRetriever::GeoRetriever(RetrievalConfig cfg, std::shared_ptr<Transport> transport)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), cache_(cfg_.cache_dir) {
  cfg_.validate();
}

HttpResponse GeoRetriever::send_with_retry(const HttpRequest& request) {
  HttpResponse last;
  for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
    ++requests_;
    last = transport_->send(request);
    if (last.ok()) return last;
    if (!last.retryable()) break;
    if (attempt < cfg_.max_attempts && cfg_.backoff_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.backoff_ms) * (1 << (attempt - 1)));
    }
  }
  const std::string cause =
      last.status == 0 ? fmt::format("transport failure ({})", last.error)
                       : fmt::format("HTTP {}", last.status);
  throw Error(ErrorKind::ProviderError,
              fmt::format("{} request failed: {} [{}]", to_string(request.provider), cause,
                          canonical_url(request.url)));
}

Address GeoRetriever::reverse_geocode(const GeoPoint& point) {
  if (auto hit = cache_.get("geocode", point, "")) return hit->get<Address>();
  const auto response = send_with_retry(reverse_geocode_request(point, cfg_));
  Address address = parse_reverse_geocode(response.body);
  address.retrieved_at = utc_timestamp();
  cache_.put("geocode", point, "", address);
  return address;
}

std::vector<NearbyPlace> GeoRetriever::nearby_places(const GeoPoint& point) {
  const std::string params =
      fmt::format("r={}|n={}|k={}|tag={}", cfg_.places_radius_m, cfg_.places_limit,
                  cfg_.places_overfetch, cfg_.places_tag.value_or(""));
  if (auto hit = cache_.get("places", point, params)) return hit->get<std::vector<NearbyPlace>>();
  const auto response = send_with_retry(nearby_places_request(point, cfg_));
  auto places = parse_nearby_places(response.body, point, cfg_.places_radius_m, cfg_.places_limit);
  cache_.put("places", point, params, places);
  return places;
}

ImageRef GeoRetriever::fetch_street_view(const GeoPoint& point) {
  const std::string params =
      fmt::format("id={}|r={}|p={}|s={}x{}|h={}|seed={}", point.id(), cfg_.svi_radius_m,
                  cfg_.resample_probes, cfg_.image_width, cfg_.image_height, cfg_.heading, cfg_.seed);
  if (auto hit = cache_.get("svi", point, params)) return hit->get<ImageRef>();

  std::vector<GeoPoint> probes{point};
  for (auto& p : jitter_probes(point, cfg_)) probes.push_back(std::move(p));

  ImageRef ref;
  ref.heading = cfg_.heading;
  for (const auto& probe : probes) {
    ++ref.probes_tried;
    const auto meta_response = send_with_retry(streetview_metadata_request(probe, cfg_));
    const auto meta = guarded_parse("street-view metadata", [&] { return json::parse(meta_response.body); });
    const std::string status = meta.value("status", "");
    if (status == "ZERO_RESULTS" || status == "NOT_FOUND") continue;
    if (status != "OK") {
      throw Error(ErrorKind::ProviderError, fmt::format("street-view metadata status '{}'", status));
    }
    GeoPoint capture = probe;
    if (meta.contains("location")) {
      capture = guarded_parse("street-view metadata", [&] {
        const auto& loc = meta.at("location");
        return GeoPoint(loc.at("lat").get<double>(), loc.at("lng").get<double>(), probe.id());
      });
    }
    const double offset = haversine_distance(point, capture);
    if (offset > cfg_.svi_radius_m) continue;  // panorama outside the buffer

    const auto image = send_with_retry(streetview_image_request(probe, cfg_));
    ref.content_hash = sha256_hex(image.body);
    ref.local_path = "img/" + ref.content_hash + ".jpg";
    const fs::path target = cfg_.cache_dir / ref.local_path;
    std::error_code ec;
    if (!fs::exists(target, ec)) write_file_atomic(target, image.body);
    ref.status = ImageStatus::Available;
    ref.capture_point = capture;
    ref.offset_m = offset;
    break;
  }
  cache_.put("svi", point, params, ref);
  return ref;
}

GeoContext GeoRetriever::build_geo_context(const GeoPoint& point) {
  GeoContext ctx;
  ctx.point = point;
  ctx.address = reverse_geocode(point);
  ctx.nearby = nearby_places(point);
  ctx.image = fetch_street_view(point);
  return ctx;
}

std::vector<TaggedElement> GeoRetriever::tagged_elements(const GeoPoint& point, double radius_m) {
  const std::string params = fmt::format("r={}", radius_m);
  std::vector<TaggedElement> elements;
  if (auto hit = cache_.get("poi", point, params)) {
    for (const auto& e : *hit) {
      TaggedElement t;
      t.location = e.at("location").get<GeoPoint>();
      t.tags = e.at("tags").get<std::map<std::string, std::string>>();
      elements.push_back(std::move(t));
    }
    return elements;
  }
  const auto response = send_with_retry(tagged_elements_request(point, radius_m, cfg_));
  elements = parse_tagged_elements(response.body);
  json cached = json::array();
  for (const auto& t : elements) cached.push_back({{"location", t.location}, {"tags", t.tags}});
  cache_.put("poi", point, params, cached);
  return elements;
}

std::vector<ContextOutcome> build_geo_contexts(GeoRetriever& retriever,
                                               std::span<const GeoPoint> points,
                                               std::size_t workers) {
  std::vector<ContextOutcome> out(points.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      out[i].id = points[i].id();
      try {
        out[i].context = retriever.build_geo_context(points[i]);
      } catch (const Error& e) {
        out[i].error = e.what();
        out[i].error_kind = e.kind();
      } catch (const std::exception& e) {
        out[i].error = e.what();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, points.size()));
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(work);
    work();
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, const GeoPoint& v) {
  j = json{{"id", v.id()}, {"lat", v.lat()}, {"lon", v.lon()}};
}

void from_json(const json& j, GeoPoint& v) {
  v = GeoPoint(j.at("lat").get<double>(), j.at("lon").get<double>(), j.value("id", ""));
}

void to_json(json& j, const Address& v) {
  json comps = json::array();
  for (const auto& [k, val] : v.components) comps.push_back({k, val});
  j = json{{"display_name", v.display_name},
           {"components", comps},
           {"provider", v.provider},
           {"retrieved_at", v.retrieved_at}};
}

void from_json(const json& j, Address& v) {
  v.display_name = j.at("display_name").get<std::string>();
  v.components.clear();
  for (const auto& c : j.at("components")) {
    v.components.emplace_back(c.at(0).get<std::string>(), c.at(1).get<std::string>());
  }
  v.provider = j.value("provider", "");
  v.retrieved_at = j.value("retrieved_at", "");
}

void to_json(json& j, const NearbyPlace& v) {
  j = json{{"name", v.name},
           {"location", v.location},
           {"distance_m", v.distance_m},
           {"category", v.category ? json(*v.category) : json(nullptr)}};
}

void from_json(const json& j, NearbyPlace& v) {
  v.name = j.at("name").get<std::string>();
  v.location = j.at("location").get<GeoPoint>();
  v.distance_m = j.at("distance_m").get<double>();
  v.category = j.contains("category") && !j.at("category").is_null()
                   ? std::optional<std::string>(j.at("category").get<std::string>())
                   : std::nullopt;
}

void to_json(json& j, const ImageRef& v) {
  j = json{{"status", v.available() ? "available" : "missing"},
           {"local_path", v.local_path},
           {"capture_point", v.capture_point ? json(*v.capture_point) : json(nullptr)},
           {"offset_m", v.offset_m},
           {"heading", v.heading},
           {"content_hash", v.content_hash},
           {"probes_tried", v.probes_tried}};
}

void from_json(const json& j, ImageRef& v) {
  v.status = j.at("status").get<std::string>() == "available" ? ImageStatus::Available
                                                               : ImageStatus::Missing;
  v.local_path = j.value("local_path", "");
  v.capture_point = j.contains("capture_point") && !j.at("capture_point").is_null()
                        ? std::optional<GeoPoint>(j.at("capture_point").get<GeoPoint>())
                        : std::nullopt;
  v.offset_m = j.value("offset_m", 0.0);
  v.heading = j.value("heading", 0.0);
  v.content_hash = j.value("content_hash", "");
  v.probes_tried = j.value("probes_tried", 0);
}

void to_json(json& j, const GeoContext& v) {
  j = json{{"point", v.point}, {"address", v.address}, {"nearby", v.nearby}, {"image", v.image}};
}

void from_json(const json& j, GeoContext& v) {
  v.point = j.at("point").get<GeoPoint>();
  v.address = j.at("address").get<Address>();
  v.nearby = j.at("nearby").get<std::vector<NearbyPlace>>();
  v.image = j.at("image").get<ImageRef>();
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace svllm
