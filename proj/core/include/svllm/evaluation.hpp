#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "svllm/binning.hpp"
#include "svllm/indicator.hpp"
#include "svllm/prompt.hpp"
#include "svllm/retrieval.hpp"

namespace svllm {

// Throws LengthMismatch, EmptyInput, NonFinite.
double mae(std::span<const double> y, std::span<const double> y_hat);
double rmse(std::span<const double> y, std::span<const double> y_hat);
/// 1 - SS_res / SS_tot. Also throws TooFewValues (n < 2) and ZeroVariance.
double r_squared(std::span<const double> y, std::span<const double> y_hat);

enum class ValueSpace { Bin, Unit };

std::string_view to_string(ValueSpace space) noexcept;

/// One scored prediction. `prediction` is expressed in `space`: bin values
/// are 0.0..9.9 (fractional for baselines), unit values are in the
/// indicator's ground-truth units.
struct PredictionRecord {
  std::string sample_id;
  std::string city;
  IndicatorTask task = IndicatorTask::PopulationDensity;
  std::string model;
  double truth = 0.0;  // ground-truth units
  double prediction = 0.0;
  ValueSpace space = ValueSpace::Bin;
  // audit trail (LLM runs)
  std::string preset;
  std::string raw_answer;
  std::string rationale;
  std::vector<std::string> prompt_hashes;
  std::string template_version;
};

void to_json(nlohmann::json& j, const PredictionRecord& v);
void from_json(const nlohmann::json& j, PredictionRecord& v);

inline constexpr std::string_view kPooledCity = "ALL";

struct MetricsRow {
  std::string city;
  IndicatorTask task = IndicatorTask::PopulationDensity;
  std::string model;
  ValueSpace space = ValueSpace::Bin;
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> r2;  // empty when the truths have zero variance
  std::size_t n = 0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  std::vector<std::string> warnings;

  const MetricsRow* find(std::string_view city, IndicatorTask task, std::string_view model,
                         ValueSpace space) const;
};

/// Groups by (city, task, model) plus a pooled "ALL" city per (task, model)
/// and scores each group in bin space and in ground-truth units. Throws
/// MissingScale when a record's (task, city) has no scale.
MetricsReport evaluate_run(std::span<const PredictionRecord> predictions, const ScaleSet& scales);

void to_json(nlohmann::json& j, const MetricsReport& v);

// ---------------------------------------------------------------------------
// Tables

struct Table {
  std::string title;
  std::vector<std::string> header;  // first entry names the row-label column
  std::vector<std::vector<std::string>> rows;
};

/// Fixed 4-decimal formatting used for every metric cell; "n/a" for empty.
std::string format_metric(std::optional<double> v);

std::string render_text(const Table& t);
std::string render_csv(const Table& t);
nlohmann::json render_json(const Table& t);

struct ModelColumn {
  std::string model;  // key in the report
  std::string label;  // column header
};

/// Task rows x model columns of R^2 for one city (pooled by default).
Table model_comparison_table(const MetricsReport& report, std::span<const ModelColumn> models,
                             ValueSpace space, std::string_view city = kPooledCity);

/// City rows x (MAE, RMSE, R2) per model for one task.
Table per_city_table(const MetricsReport& report, IndicatorTask task,
                     std::span<const ModelColumn> models, std::span<const std::string> cities,
                     ValueSpace space);

// ---------------------------------------------------------------------------
// Ablations

struct AblationSample {
  std::string city;
  GeoContext ctx;
  double truth = 0.0;  // ground-truth units
};

struct AblationRun {
  Preset preset = Preset::Full;
  AblationFlags flags;
  std::map<std::string, std::optional<double>> r2_by_city;  // bin space
  std::size_t gateway_calls = 0;
  std::vector<PredictionRecord> predictions;
  std::string error;  // set when the preset failed; other presets still run
};

struct AblationOptions {
  std::vector<Preset> presets{kAllPresets.begin(), kAllPresets.end()};
  std::size_t workers = 1;
  PredictOptions predict;
};

/// Runs predict_sample for every sample under each preset, sequentially per
/// preset, and scores per-city R^2 in bin space.
std::vector<AblationRun> run_ablations(std::span<const AblationSample> samples, IndicatorTask task,
                                       const ScaleSet& scales, ChatGateway& gateway,
                                       const AblationOptions& options = {});

/// City rows x preset columns of R^2, headed by preset name.
Table ablation_table(std::span<const AblationRun> runs, std::span<const std::string> cities);

}  // namespace svllm
