#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "svllm/config.hpp"
#include "svllm/evaluation.hpp"
#include "svllm/http.hpp"

namespace svllm {

/// File layout of one run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path synth_truth() const { return root / "synth" / "ground_truth.jsonl"; }
  std::filesystem::path synth_pois() const { return root / "synth" / "pois.jsonl"; }
  std::filesystem::path dataset() const { return root / "dataset.jsonl"; }
  std::filesystem::path scales() const { return root / "scales.json"; }
  std::filesystem::path contexts() const { return root / "contexts.jsonl"; }
  std::filesystem::path exclusions() const { return root / "exclusions.jsonl"; }
  std::filesystem::path predictions_dir() const { return root / "predictions"; }
  std::filesystem::path ablation_dir() const { return root / "predictions" / "ablation"; }
  std::filesystem::path transcripts_dir() const { return root / "transcripts"; }
  std::filesystem::path models_dir() const { return root / "models"; }
  std::filesystem::path results_dir() const { return root / "results"; }
  std::filesystem::path manifest(const std::string& stage) const {
    return root / "manifests" / (stage + ".json");
  }
};

RunPaths run_paths(const PipelineConfig& cfg);

struct StageOptions {
  bool force = false;  // ignore a matching manifest and partial outputs
  /// Network transport behind the fixture layer; HttpTransport when null.
  std::shared_ptr<Transport> live;
  std::function<void(const std::string&)> log;
};

struct StageResult {
  std::string stage;
  bool skipped = false;  // manifest matched; nothing was recomputed
  nlohmann::json counts = nlohmann::json::object();
  std::vector<std::string> outputs;  // relative to the run directory
  std::size_t provider_requests = 0;  // requests issued to the provider layer
  std::size_t upstream_calls = 0;     // requests that reached the network
  std::vector<std::string> warnings;
};

/// Run manifest written after a stage completes.
struct Manifest {
  std::string stage;
  std::string stage_hash;   // config subset + input file digests
  std::string config_hash;  // whole config
  std::uint64_t seed = 0;
  std::string template_version;
  nlohmann::json counts = nlohmann::json::object();
  std::vector<std::string> outputs;
  std::vector<std::string> warnings;
  std::string finished_at;
};

void to_json(nlohmann::json& j, const Manifest& m);
void from_json(const nlohmann::json& j, Manifest& m);
std::optional<Manifest> read_manifest(const RunPaths& paths, const std::string& stage);

/// Generates the synthetic city and its replay fixtures.
StageResult cmd_synth(const PipelineConfig& cfg, const StageOptions& options = {});
/// Farthest-first order, split, per-task bin scales.
StageResult cmd_sample(const PipelineConfig& cfg, const StageOptions& options = {});
/// Geographic context for the test split; resumable per sample.
StageResult cmd_retrieve(const PipelineConfig& cfg, const StageOptions& options = {});
/// Model predictions for the configured preset; resumable per (sample, task).
StageResult cmd_predict(const PipelineConfig& cfg, const StageOptions& options = {});

struct ExternalImport {
  std::filesystem::path csv;
  std::string name = "external";
  ValueSpace space = ValueSpace::Bin;
};

/// KNN and GBRT on coordinates, plus optional externally produced predictions.
StageResult cmd_baseline(const PipelineConfig& cfg, const StageOptions& options = {},
                         const std::optional<ExternalImport>& external = std::nullopt);
StageResult cmd_evaluate(const PipelineConfig& cfg, const StageOptions& options = {});
StageResult cmd_ablate(const PipelineConfig& cfg, const StageOptions& options = {});
StageResult cmd_bias(const PipelineConfig& cfg, const StageOptions& options = {});

/// Every stage in order; synth is skipped when points_file is set.
std::vector<StageResult> cmd_run(const PipelineConfig& cfg, const StageOptions& options = {});

/// Prediction files carry a header line; this skips it.
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

/// File name tag for a model under a preset: "llm" for Full, "llm-no-cot" otherwise.
std::string prediction_tag(const std::string& model, Preset preset);

}  // namespace svllm
