#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "svllm/baselines.hpp"
#include "svllm/binning.hpp"
#include "svllm/geo.hpp"
#include "svllm/prompt.hpp"
#include "svllm/retrieval.hpp"
#include "svllm/sampler.hpp"

namespace svllm {

struct CityConfig {
  std::string name = "Synthopolis";
  BBox bbox{22.25, 22.35, 114.10, 114.25};
};

/// Ground-truth surface for one task in a synthetic city. Positions are
/// fractions (u, v) of the bounding box: u along longitude, v along latitude.
struct SynthFunction {
  std::string kind = "gaussian_bump";  // gaussian_bump | linear_gradient | checkerboard
  double center_u = 0.5;
  double center_v = 0.5;
  double sigma_m = 3000.0;  // gaussian_bump width
  double angle_deg = 0.0;   // linear_gradient direction, counter-clockwise from east
  int cells = 4;            // checkerboard cells per side
  double amplitude = 1.0;
  double offset = 0.0;
  double noise = 0.0;       // sd of seeded per-point noise

  double evaluate(const BBox& bbox, const GeoPoint& p) const;
};

struct SynthConfig {
  std::size_t n_points = 500;
  std::map<IndicatorTask, SynthFunction> functions;  // defaults filled per task
  /// POIs per km^2 for Residential .. Other (Total excluded).
  std::array<double, 7> poi_intensity{8.0, 8.0, 2.0, 2.0, 2.0, 4.0, 2.0};
  double svi_resample_rate = 0.10;  // direct lookup fails, a jitter probe succeeds
  double svi_missing_rate = 0.05;   // every probe fails

  /// Throws InvalidSpec.
  void validate(const BBox& bbox) const;
};

struct BaselineConfig {
  KnnConfig knn;
  GbrtConfig gbrt;
  bool raw_units = false;  // fit on ground-truth units instead of bin values
};

struct BiasConfig {
  double radius_m = 500.0;
  std::filesystem::path taxonomy;  // empty: built-in mapping
  std::string model = "llm";
  std::size_t top_n = 10;
};

struct EvaluationConfig {
  IndicatorTask ablation_task = IndicatorTask::PopulationDensity;
  bool parallel_presets = false;
};

struct PipelineConfig {
  CityConfig city;
  std::vector<IndicatorTask> tasks{kAllTasks.begin(), kAllTasks.end()};
  std::uint64_t seed = 42;
  std::filesystem::path workdir = "run";
  std::filesystem::path points_file;  // optional input instead of synth output
  std::size_t workers = 4;

  RetrievalConfig retrieval;
  SplitConfig split;
  BinFitOptions binning;
  ModelConfig model;
  Preset preset = Preset::Full;
  bool answer_images = true;
  bool keep_missing_images = false;
  SynthConfig synth;
  BaselineConfig baselines;
  EvaluationConfig evaluation;
  BiasConfig bias;

  /// Derives every component seed from `seed` and fills unset defaults.
  void finalize();
  void validate() const;
};

/// Parses a JSON config. Relative paths are resolved against `base_dir`.
/// Unknown keys are rejected. Throws ConfigError.
PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);

/// Canonical JSON view without credentials.
nlohmann::json config_to_json(const PipelineConfig& cfg);
std::string config_hash(const PipelineConfig& cfg);

/// Reads API keys from SVLLM_STREETVIEW_KEY / SVLLM_CHAT_API_KEY.
void apply_env_credentials(PipelineConfig& cfg);

}  // namespace svllm
