#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "svllm/bias.hpp"
#include "svllm/config.hpp"
#include "svllm/dataset.hpp"
#include "svllm/http.hpp"

namespace svllm {

struct SynthPoi {
  std::string osm_type = "node";  // node | way (ways carry a center)
  std::int64_t osm_id = 0;
  std::string name;
  GeoPoint location;
  std::map<std::string, std::string> tags;
  PoiCategory category = PoiCategory::Other;  // intended category of the tag template
};

void to_json(nlohmann::json& j, const SynthPoi& v);

/// How the fake panorama service answers for one sample.
enum class SviRegime { Direct, Resampled, Missing };

struct SynthSvi {
  SviRegime regime = SviRegime::Direct;
  std::size_t probe = 0;  // successful probe index when Resampled
  double offset_m = 0.0;  // capture offset when Direct
  double bearing_deg = 0.0;
};

struct SynthCity {
  std::vector<TruthPoint> points;
  std::vector<SynthPoi> pois;
  std::map<std::string, SynthSvi> svi;  // by sample id
};

/// Deterministic in the config (seed included). Throws InvalidSpec.
SynthCity generate_synth_city(const PipelineConfig& cfg);

/// Address the fake geocoder reports for a point: road from a 200 m grid
/// cell, district from a 3x3 split of the bbox.
Address synth_address(const PipelineConfig& cfg, const GeoPoint& point);

struct SynthFixtureStats {
  std::size_t fixtures = 0;
  std::size_t direct = 0;
  std::size_t resampled = 0;
  std::size_t missing = 0;
};

/// Records replay fixtures for every request the retrieval and bias stages
/// will issue for the city's points under `cfg`.
SynthFixtureStats write_synth_fixtures(const SynthCity& city, const PipelineConfig& cfg,
                                       const FixtureStore& store);

/// Placeholder JPEG bytes (SOI/EOI markers around an identifying payload).
std::string synth_image_bytes(const GeoPoint& capture, const std::string& sample_id);

}  // namespace svllm
