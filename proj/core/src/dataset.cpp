#include "svllm/dataset.hpp"

#include <cmath>
#include <fstream>

#include <fmt/core.h>

#include "svllm/error.hpp"
#include "svllm/http.hpp"

namespace svllm {

using nlohmann::json;

std::string_view to_string(SplitTag tag) noexcept {
  switch (tag) {
    case SplitTag::Train: return "train";
    case SplitTag::Val: return "val";
    case SplitTag::Test: return "test";
  }
  return "train";
}

std::optional<SplitTag> parse_split_tag(std::string_view text) noexcept {
  if (text == "train") return SplitTag::Train;
  if (text == "val") return SplitTag::Val;
  if (text == "test") return SplitTag::Test;
  return std::nullopt;
}

namespace {

std::map<IndicatorTask, double> read_truths(const json& j) {
  std::map<IndicatorTask, double> out;
  for (const auto& [name, value] : j.items()) {
    const auto task = parse_task(name);
    if (!task) throw Error(ErrorKind::SchemaError, "unknown task '" + name + "'");
    const double v = value.get<double>();
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "truth for " + name + " is not finite");
    out[*task] = v;
  }
  return out;
}

json write_truths(const std::map<IndicatorTask, double>& truths) {
  json j = json::object();
  for (const auto& [task, v] : truths) j[std::string(task_key(task))] = v;
  return j;
}

}  // namespace

void to_json(json& j, const DatasetRecord& v) {
  json bins = json::object();
  for (const auto& [task, b] : v.bins) bins[std::string(task_key(task))] = b.str();
  j = json{{"id", v.id},
           {"lat", v.point.lat()},
           {"lon", v.point.lon()},
           {"city", v.city},
           {"split", to_string(v.split)},
           {"order", v.order},
           {"min_distance_m", v.min_distance_m},
           {"truths", write_truths(v.truths)},
           {"bins", bins}};
  if (v.context) j["context"] = *v.context;
}

void from_json(const json& j, DatasetRecord& v) {
  v = DatasetRecord{};
  v.id = j.at("id").get<std::string>();
  v.point = GeoPoint(j.at("lat").get<double>(), j.at("lon").get<double>(), v.id);
  v.city = j.value("city", "");
  const auto split = parse_split_tag(j.at("split").get<std::string>());
  if (!split) throw Error(ErrorKind::SchemaError, "record " + v.id + ": bad split tag");
  v.split = *split;
  v.order = j.value("order", std::size_t{0});
  v.min_distance_m = j.value("min_distance_m", 0.0);
  v.truths = read_truths(j.at("truths"));
  for (const auto& [name, value] : j.at("bins").items()) {
    const auto task = parse_task(name);
    if (!task) throw Error(ErrorKind::SchemaError, "unknown task '" + name + "'");
    v.bins[*task] = BinLabel::from_value(std::stod(value.get<std::string>()));
  }
  if (j.contains("context")) v.context = j.at("context").get<GeoContext>();
}

const DatasetRecord* Dataset::find(const std::string& id) const {
  for (const auto& r : records) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::vector<json> lines;
  lines.reserve(dataset.records.size() + 1);
  json header = dataset.header.is_object() ? dataset.header : json::object();
  header["schema"] = kDatasetSchema;
  header["version"] = kDatasetVersion;
  lines.push_back(std::move(header));
  for (const auto& r : dataset.records) lines.emplace_back(r);
  write_jsonl(path, lines);
}

Dataset read_dataset(const std::filesystem::path& path) {
  auto lines = read_jsonl(path);
  if (lines.empty()) throw Error(ErrorKind::SchemaError, path.string() + ": empty dataset");
  Dataset d;
  d.header = std::move(lines.front());
  if (d.header.value("schema", "") != kDatasetSchema) {
    throw Error(ErrorKind::SchemaError, path.string() + ": missing dataset schema header");
  }
  if (d.header.value("version", 0) != kDatasetVersion) {
    throw Error(ErrorKind::SchemaError,
                fmt::format("{}: dataset version {} is not supported", path.string(),
                            d.header.value("version", 0)));
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    try {
      d.records.push_back(lines[i].get<DatasetRecord>());
    } catch (const json::exception& e) {
      throw Error(ErrorKind::SchemaError, fmt::format("{}:{}: {}", path.string(), i + 1, e.what()));
    }
  }
  return d;
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingArtifact, "missing " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::SchemaError, fmt::format("{}:{}: {}", path.string(), n, e.what()));
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const json> lines) {
  std::string text;
  for (const auto& l : lines) text += l.dump() + "\n";
  write_file_atomic(path, text);
}

void append_jsonl(const std::filesystem::path& path, std::span<const json> lines) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error(ErrorKind::MissingArtifact, "cannot append to " + path.string());
  for (const auto& l : lines) out << l.dump() << '\n';
}

void to_json(json& j, const TruthPoint& v) {
  j = json{{"id", v.point.id()},
           {"lat", v.point.lat()},
           {"lon", v.point.lon()},
           {"truths", write_truths(v.truths)}};
}

void from_json(const json& j, TruthPoint& v) {
  v.point = GeoPoint(j.at("lat").get<double>(), j.at("lon").get<double>(), j.at("id").get<std::string>());
  v.truths = read_truths(j.at("truths"));
}

}  // namespace svllm
