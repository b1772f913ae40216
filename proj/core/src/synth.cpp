#include "svllm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "svllm/error.hpp"
#include "svllm/hashing.hpp"
#include "svllm/retrieval.hpp"

namespace svllm {

using nlohmann::json;

namespace {

struct PoiTemplate {
  const char* key;
  const char* value;
  const char* suffix;
  bool area;  // emitted as a way with a center
};

// One row per category, Residential .. Other.
const std::vector<std::vector<PoiTemplate>>& poi_templates() {
  static const std::vector<std::vector<PoiTemplate>> t = {
      {{"building", "apartments", "Apartments", false},
       {"building", "house", "House", false},
       {"landuse", "residential", "Estate", true}},
      {{"shop", "supermarket", "Market", false},
       {"amenity", "restaurant", "Kitchen", false},
       {"amenity", "cafe", "Cafe", false},
       {"office", "company", "Offices", false}},
      {{"building", "warehouse", "Warehouse", false},
       {"landuse", "industrial", "Works", true},
       {"craft", "carpenter", "Joinery", false}},
      {{"amenity", "townhall", "Town Hall", false},
       {"amenity", "police", "Police Station", false},
       {"amenity", "clinic", "Clinic", false}},
      {{"amenity", "school", "School", false},
       {"amenity", "library", "Library", false},
       {"amenity", "university", "College", false}},
      {{"leisure", "park", "Park", true},
       {"leisure", "garden", "Garden", false},
       {"natural", "wood", "Wood", true}},
      {{"tourism", "viewpoint", "Lookout", false},
       {"tourism", "artwork", "Sculpture", false},
       {"man_made", "tower", "Tower", false}},
  };
  return t;
}

constexpr std::array<const char*, 16> kWords = {
    "Harbour", "Lantern", "Cedar",  "Orchard", "Granite", "Willow",  "Beacon", "Mill",
    "Quarry",  "Tide",    "Falcon", "Juniper", "Copper",  "Meadow", "Summit", "Heron"};
constexpr std::array<const char*, 4> kRoadKinds = {"Street", "Road", "Avenue", "Lane"};

std::mt19937_64 rng_for(std::uint64_t seed, std::string_view label) {
  return std::mt19937_64(mix_seed(seed, fnv1a64(label)));
}

double bbox_height_m(const BBox& b) {
  return (b.max_lat - b.min_lat) * std::numbers::pi / 180.0 * kEarthRadiusM;
}

double bbox_width_m(const BBox& b) {
  const double mid = (b.min_lat + b.max_lat) / 2.0 * std::numbers::pi / 180.0;
  return (b.max_lon - b.min_lon) * std::numbers::pi / 180.0 * kEarthRadiusM * std::cos(mid);
}

GeoPoint uniform_point(std::mt19937_64& rng, const BBox& b, std::string id) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double lat = b.min_lat + u(rng) * (b.max_lat - b.min_lat);
  const double lon = b.min_lon + u(rng) * (b.max_lon - b.min_lon);
  return GeoPoint(lat, lon, std::move(id));
}

json element_json(const SynthPoi& p) {
  json j = {{"type", p.osm_type}, {"id", p.osm_id}};
  if (p.osm_type == "node") {
    j["lat"] = p.location.lat();
    j["lon"] = p.location.lon();
  } else {
    j["center"] = {{"lat", p.location.lat()}, {"lon", p.location.lon()}};
  }
  j["tags"] = p.tags;
  return j;
}

HttpResponse json_response(const json& body) {
  HttpResponse r;
  r.status = 200;
  r.content_type = "application/json";
  r.body = body.dump();
  return r;
}

}  // namespace

void to_json(json& j, const SynthPoi& v) {
  j = element_json(v);
  j["category"] = category_key(v.category);
}

SynthCity generate_synth_city(const PipelineConfig& cfg) {
  const BBox& bbox = cfg.city.bbox;
  cfg.synth.validate(bbox);
  SynthCity city;

  const std::size_t n = cfg.synth.n_points;
  const int width = std::max<int>(4, static_cast<int>(std::to_string(n - 1).size()));
  auto point_rng = rng_for(cfg.seed, "synth:points");
  std::normal_distribution<double> normal(0.0, 1.0);
  city.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    TruthPoint tp;
    tp.point = uniform_point(point_rng, bbox, fmt::format("p{:0{}}", i, width));
    for (IndicatorTask task : cfg.tasks) {
      const auto it = cfg.synth.functions.find(task);
      if (it == cfg.synth.functions.end()) {
        throw Error(ErrorKind::InvalidSpec, fmt::format("no synth function for {}", task_key(task)));
      }
      double v = it->second.evaluate(bbox, tp.point);
      if (it->second.noise > 0) {
        auto noise_rng = rng_for(mix_seed(cfg.seed, fnv1a64(task_key(task))), tp.point.id());
        v += it->second.noise * normal(noise_rng);
      }
      tp.truths[task] = v;
    }
    city.points.push_back(std::move(tp));
  }

  const double area_km2 = bbox_height_m(bbox) * bbox_width_m(bbox) / 1e6;
  auto poi_rng = rng_for(cfg.seed, "synth:pois");
  std::int64_t next_id = 1'000'000;
  const auto& templates = poi_templates();
  for (std::size_t c = 0; c < templates.size(); ++c) {
    const double mean = cfg.synth.poi_intensity[c] * area_km2;
    if (mean <= 0) continue;
    std::poisson_distribution<long> count(mean);
    const long k = count(poi_rng);
    for (long i = 0; i < k; ++i) {
      const auto& tpl = templates[c][poi_rng() % templates[c].size()];
      SynthPoi p;
      p.osm_id = next_id++;
      p.osm_type = tpl.area ? "way" : "node";
      p.category = static_cast<PoiCategory>(c);
      p.name = fmt::format("{} {}", kWords[poi_rng() % kWords.size()], tpl.suffix);
      p.location = uniform_point(poi_rng, bbox, fmt::format("{}/{}", p.osm_type, p.osm_id));
      p.tags = {{tpl.key, tpl.value}, {"name", p.name}};
      city.pois.push_back(std::move(p));
    }
  }

  const double direct_max = std::min(15.0, 0.9 * cfg.retrieval.svi_radius_m);
  for (const auto& tp : city.points) {
    auto rng = rng_for(cfg.seed, "synth:svi:" + tp.point.id());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SynthSvi s;
    const double draw = u(rng);
    if (draw < cfg.synth.svi_missing_rate) {
      s.regime = SviRegime::Missing;
    } else if (draw < cfg.synth.svi_missing_rate + cfg.synth.svi_resample_rate) {
      if (cfg.retrieval.resample_probes == 0) {
        s.regime = SviRegime::Missing;
      } else {
        s.regime = SviRegime::Resampled;
        s.probe = rng() % cfg.retrieval.resample_probes;
      }
    } else {
      s.offset_m = u(rng) * direct_max;
      s.bearing_deg = u(rng) * 360.0;
    }
    city.svi[tp.point.id()] = s;
  }
  return city;
}

Address synth_address(const PipelineConfig& cfg, const GeoPoint& point) {
  const BBox& b = cfg.city.bbox;
  const double fy = (point.lat() - b.min_lat) / (b.max_lat - b.min_lat);
  const double fx = (point.lon() - b.min_lon) / (b.max_lon - b.min_lon);
  const auto cell = [](double f, double size_m) {
    return static_cast<long>(std::floor(std::clamp(f, 0.0, 1.0) * size_m / 200.0));
  };
  const long cy = cell(fy, bbox_height_m(b));
  const long cx = cell(fx, bbox_width_m(b));
  const std::uint64_t h = mix_seed(static_cast<std::uint64_t>(cy) * 100'003 + static_cast<std::uint64_t>(cx),
                                   fnv1a64(cfg.city.name));

  static constexpr std::array<const char*, 3> kNs = {"South", "Central", "North"};
  static constexpr std::array<const char*, 3> kEw = {"West", "Central", "East"};
  const auto third = [](double f) { return std::min(2, static_cast<int>(std::clamp(f, 0.0, 1.0) * 3)); };
  std::string district = third(fy) == 1 && third(fx) == 1
                             ? "Central District"
                             : fmt::format("{} {} District", kNs[third(fy)], kEw[third(fx)]);

  Address a;
  a.provider = "nominatim";
  const std::string road =
      fmt::format("{} {}", kWords[h % kWords.size()], kRoadKinds[(h >> 8) % kRoadKinds.size()]);
  const std::string postcode = fmt::format("SY-{:04d}", (h >> 16) % 10'000);
  a.components = {{"road", road},
                  {"suburb", district},
                  {"city", cfg.city.name},
                  {"postcode", postcode},
                  {"country", "Synthland"}};
  a.display_name = fmt::format("{}, {}, {}, {}, Synthland", road, district, cfg.city.name, postcode);
  return a;
}

std::string synth_image_bytes(const GeoPoint& capture, const std::string& sample_id) {
  std::string bytes = "\xFF\xD8\xFF\xE0";
  bytes += fmt::format("svllm synthetic panorama {} {:.6f},{:.6f}", sample_id, capture.lat(),
                       capture.lon());
  bytes += "\xFF\xD9";
  return bytes;
}

SynthFixtureStats write_synth_fixtures(const SynthCity& city, const PipelineConfig& cfg,
                                       const FixtureStore& store) {
  SynthFixtureStats stats;
  const RetrievalConfig& rc = cfg.retrieval;
  const auto save = [&](const HttpRequest& req, const HttpResponse& resp) {
    store.save(req, resp);
    ++stats.fixtures;
  };

  std::vector<const SynthPoi*> nodes;
  for (const auto& p : city.pois) {
    if (p.osm_type != "node") continue;
    if (rc.places_tag && !p.tags.count(*rc.places_tag)) continue;
    nodes.push_back(&p);
  }
  const std::size_t server_cap = rc.places_limit * rc.places_overfetch;
  const double poi_reach = cfg.bias.radius_m * 1.2;

  for (const auto& tp : city.points) {
    const GeoPoint& pt = tp.point;

    const Address addr = synth_address(cfg, pt);
    nlohmann::ordered_json nominatim = {{"place_id", fnv1a64(pt.id()) % 100'000'000},
                                        {"lat", fmt::format("{:.7f}", pt.lat())},
                                        {"lon", fmt::format("{:.7f}", pt.lon())},
                                        {"display_name", addr.display_name}};
    auto& components = nominatim["address"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : addr.components) components[k] = v;
    HttpResponse geo;
    geo.status = 200;
    geo.content_type = "application/json";
    geo.body = nominatim.dump();
    save(reverse_geocode_request(pt, rc), geo);

    std::vector<std::pair<double, const SynthPoi*>> near;
    for (const SynthPoi* p : nodes) {
      const double d = haversine_distance(pt, p->location);
      if (d <= rc.places_radius_m) near.emplace_back(d, p);
    }
    std::sort(near.begin(), near.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : a.second->osm_id < b.second->osm_id;
    });
    if (near.size() > server_cap) near.resize(server_cap);
    // Overpass does not sort by distance; emit in id order.
    std::sort(near.begin(), near.end(),
              [](const auto& a, const auto& b) { return a.second->osm_id < b.second->osm_id; });
    json elements = json::array();
    for (const auto& [d, p] : near) elements.push_back(element_json(*p));
    save(nearby_places_request(pt, rc), json_response({{"version", 0.6}, {"elements", elements}}));

    json tagged = json::array();
    for (const auto& p : city.pois) {
      if (haversine_distance(pt, p.location) <= poi_reach) tagged.push_back(element_json(p));
    }
    save(tagged_elements_request(pt, cfg.bias.radius_m, rc),
         json_response({{"version", 0.6}, {"elements", tagged}}));

    const SynthSvi& svi = city.svi.at(pt.id());
    const json zero = {{"status", "ZERO_RESULTS"}};
    const auto ok_at = [&](const GeoPoint& probe, const GeoPoint& capture) {
      save(streetview_metadata_request(probe, rc),
           json_response({{"status", "OK"},
                          {"location", {{"lat", capture.lat()}, {"lng", capture.lon()}}},
                          {"pano_id", fmt::format("synth-{:016x}", fnv1a64(pt.id()))},
                          {"date", "2023-06"}}));
      HttpResponse img;
      img.status = 200;
      img.content_type = "image/jpeg";
      img.body = synth_image_bytes(capture, pt.id());
      save(streetview_image_request(probe, rc), img);
    };

    switch (svi.regime) {
      case SviRegime::Direct: {
        ++stats.direct;
        const GeoPoint capture = destination_point(pt, svi.bearing_deg, svi.offset_m, pt.id());
        ok_at(pt, capture);
        break;
      }
      case SviRegime::Resampled: {
        ++stats.resampled;
        const auto probes = jitter_probes(pt, rc);
        save(streetview_metadata_request(pt, rc), json_response(zero));
        for (std::size_t i = 0; i < svi.probe; ++i) {
          save(streetview_metadata_request(probes[i], rc), json_response(zero));
        }
        ok_at(probes[svi.probe], probes[svi.probe]);
        break;
      }
      case SviRegime::Missing: {
        ++stats.missing;
        save(streetview_metadata_request(pt, rc), json_response(zero));
        for (const auto& probe : jitter_probes(pt, rc)) {
          save(streetview_metadata_request(probe, rc), json_response(zero));
        }
        break;
      }
    }
  }
  return stats;
}

}  // namespace svllm
