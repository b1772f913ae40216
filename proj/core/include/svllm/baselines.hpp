#pragma once

#include <cstddef>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "svllm/geo.hpp"
#include "svllm/indicator.hpp"

namespace svllm {

// ---------------------------------------------------------------------------
// k-nearest neighbours on coordinates

struct KnnConfig {
  std::size_t k = 5;
};

struct LabeledPoint {
  GeoPoint point;
  double target = 0.0;
};

/// Mean target of the k nearest training points by haversine distance. Ties
/// are broken by smallest id, then by input position; targets are summed in
/// that order. Throws EmptyTraining, KTooLarge (also for k == 0).
double knn_predict(std::span<const LabeledPoint> train, const GeoPoint& query,
                   const KnnConfig& cfg = {});

// ---------------------------------------------------------------------------
// Gradient-boosted regression trees (squared error)

struct GbrtConfig {
  int rounds = 10;
  int max_depth = 3;
  double learning_rate = 0.3;
  std::size_t min_samples_leaf = 1;

  /// Throws ConfigError on rounds < 1, max_depth < 1, learning_rate outside
  /// (0, 1] or min_samples_leaf == 0.
  void validate() const;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // go left when x[feature] <= threshold
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  double predict(std::span<const double> x) const;
};

struct GbrtModel {
  double init_value = 0.0;
  double learning_rate = 1.0;
  std::size_t n_features = 0;
  std::vector<RegressionTree> trees;
  std::vector<double> train_sse;  // after init, then after each round

  double predict(std::span<const double> x) const;
};

/// Rows are canonicalized (sorted by features, then target) before fitting,
/// so any permutation of the same rows yields an identical model. A round
/// whose tree would raise the training SSE (round-off) contributes a zero
/// tree instead. Throws TooFewSamples (< 2 rows), LengthMismatch,
/// NonFinite, DegenerateFeatures (identical rows, non-constant targets).
GbrtModel gbrt_fit(std::span<const std::vector<double>> features, std::span<const double> targets,
                   const GbrtConfig& cfg = {});

/// Throws LengthMismatch when the feature count differs from training.
double gbrt_predict(const GbrtModel& model, std::span<const double> features);

/// Default feature vector: {lat, lon}.
std::vector<double> coordinate_features(const GeoPoint& p);

void to_json(nlohmann::json& j, const GbrtModel& model);
void from_json(const nlohmann::json& j, GbrtModel& model);

// ---------------------------------------------------------------------------
// External predictions

struct ExternalPrediction {
  std::string sample_id;
  IndicatorTask task = IndicatorTask::PopulationDensity;
  double prediction = 0.0;
  std::size_t row = 0;  // 1-based data row
};

/// CSV with header columns `sample_id,task,prediction` (any order, extra
/// columns ignored). Throws SchemaError / UnknownSampleId naming the row.
std::vector<ExternalPrediction> import_external_predictions(const std::filesystem::path& path,
                                                            const std::set<std::string>& known_ids);
std::vector<ExternalPrediction> parse_external_predictions(std::string_view csv,
                                                           const std::set<std::string>& known_ids);

}  // namespace svllm
