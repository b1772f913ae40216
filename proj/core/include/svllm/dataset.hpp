#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "svllm/binning.hpp"
#include "svllm/geo.hpp"
#include "svllm/indicator.hpp"
#include "svllm/retrieval.hpp"

namespace svllm {

enum class SplitTag { Train, Val, Test };

std::string_view to_string(SplitTag tag) noexcept;
std::optional<SplitTag> parse_split_tag(std::string_view text) noexcept;

struct DatasetRecord {
  std::string id;
  GeoPoint point;
  std::string city;
  SplitTag split = SplitTag::Train;
  std::size_t order = 0;        // position in the farthest-first traversal
  double min_distance_m = 0.0;  // traversal step distance
  std::map<IndicatorTask, double> truths;
  std::map<IndicatorTask, BinLabel> bins;
  std::optional<GeoContext> context;  // joined from the retrieval stage
};

void to_json(nlohmann::json& j, const DatasetRecord& v);
void from_json(const nlohmann::json& j, DatasetRecord& v);

inline constexpr std::string_view kDatasetSchema = "svllm.dataset";
inline constexpr int kDatasetVersion = 1;

/// dataset.jsonl: a header line {"schema", "version", ...} followed by one
/// record per line.
struct Dataset {
  nlohmann::json header;
  std::vector<DatasetRecord> records;

  const DatasetRecord* find(const std::string& id) const;
};

void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
/// Throws MissingArtifact when absent, SchemaError on a foreign header.
Dataset read_dataset(const std::filesystem::path& path);

/// One JSON document per non-empty line. Throws MissingArtifact / SchemaError
/// (with the line number).
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
/// Atomic rewrite.
void write_jsonl(const std::filesystem::path& path, std::span<const nlohmann::json> lines);
void append_jsonl(const std::filesystem::path& path, std::span<const nlohmann::json> lines);

/// Input points with ground truth: {"id", "lat", "lon", "truths": {task: value}}.
struct TruthPoint {
  GeoPoint point;
  std::map<IndicatorTask, double> truths;
};

void to_json(nlohmann::json& j, const TruthPoint& v);
void from_json(const nlohmann::json& j, TruthPoint& v);

}  // namespace svllm
