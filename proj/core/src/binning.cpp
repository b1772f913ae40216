#include "svllm/binning.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "svllm/error.hpp"

namespace svllm {

BinLabel BinLabel::from_index(int index) {
  if (index < 0 || index >= kBinCount) {
    throw Error(ErrorKind::ParseError, fmt::format("bin index {} outside [0, 99]", index));
  }
  return BinLabel(index);
}

BinLabel BinLabel::from_value(double value) {
  if (!std::isfinite(value)) throw Error(ErrorKind::NonFinite, "bin label value is not finite");
  const double scaled = std::round(value * 10.0);
  return BinLabel(static_cast<int>(std::clamp(scaled, 0.0, static_cast<double>(kBinCount - 1))));
}

std::string BinLabel::str() const { return fmt::format("{}.{}", index_ / 10, index_ % 10); }

namespace {

// Number of ranks (out of n) whose bin index floor(100 r / n) is below `bin`.
std::size_t ranks_below(std::size_t bin, std::size_t n) {
  return (bin * n + kBinCount - 1) / kBinCount;
}

double median_of_sorted(std::span<const double> v) {
  const std::size_t m = v.size();
  if (m % 2 == 1) return v[m / 2];
  return (v[m / 2 - 1] + v[m / 2]) / 2.0;
}

}  // namespace

BinScale fit_bin_scale(std::span<const double> values, IndicatorTask task,
                       const BinFitOptions& options) {
  if (values.empty() || values.size() < options.min_values) {
    throw Error(ErrorKind::TooFewValues,
                fmt::format("{} values for {}, need at least {}", values.size(), task_key(task),
                            std::max<std::size_t>(options.min_values, 1)));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "non-finite fitting value");
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();

  BinScale scale;
  scale.task = task;
  scale.n_fit = n;
  scale.boundaries.resize(kBinCount + 1);
  scale.representatives.resize(kBinCount);
  scale.boundaries.front() = sorted.front();
  scale.boundaries.back() = sorted.back();
  for (std::size_t i = 1; i < kBinCount; ++i) scale.boundaries[i] = sorted[ranks_below(i, n) - 1];

  for (std::size_t i = 0; i < kBinCount; ++i) {
    const std::size_t lo = ranks_below(i, n);
    const std::size_t hi = ranks_below(i + 1, n);
    if (hi > lo) {
      scale.representatives[i] = median_of_sorted(std::span(sorted).subspan(lo, hi - lo));
    } else {
      scale.representatives[i] = scale.boundaries[i];  // empty bin: collapsed interval
    }
  }
  return scale;
}

BinLabel to_bin(const BinScale& scale, double value) {
  if (!std::isfinite(value)) throw Error(ErrorKind::NonFinite, "to_bin of non-finite value");
  const auto upper_begin = scale.boundaries.begin() + 1;
  const auto it = std::lower_bound(upper_begin, scale.boundaries.end(), value);
  if (it == scale.boundaries.end()) return BinLabel::from_index(kBinCount - 1);
  return BinLabel::from_index(static_cast<int>(it - upper_begin));
}

double from_bin(const BinScale& scale, BinLabel label) noexcept {
  return scale.representatives[static_cast<std::size_t>(label.index())];
}

std::pair<double, double> bin_interval(const BinScale& scale, BinLabel label) noexcept {
  const auto i = static_cast<std::size_t>(label.index());
  return {scale.boundaries[i], scale.boundaries[i + 1]};
}

void to_json(nlohmann::json& j, const BinScale& scale) {
  j = nlohmann::json{{"task", task_key(scale.task)},
                     {"city", scale.city ? nlohmann::json(*scale.city) : nlohmann::json(nullptr)},
                     {"n_fit", scale.n_fit},
                     {"boundaries", scale.boundaries},
                     {"representatives", scale.representatives}};
}

void from_json(const nlohmann::json& j, BinScale& scale) {
  const auto task = parse_task(j.at("task").get<std::string>());
  if (!task) throw Error(ErrorKind::SchemaError, "unknown task in bin scale");
  scale.task = *task;
  scale.city = j.contains("city") && !j.at("city").is_null()
                   ? std::optional<std::string>(j.at("city").get<std::string>())
                   : std::nullopt;
  scale.n_fit = j.at("n_fit").get<std::size_t>();
  scale.boundaries = j.at("boundaries").get<std::vector<double>>();
  scale.representatives = j.at("representatives").get<std::vector<double>>();
  if (scale.boundaries.size() != kBinCount + 1 || scale.representatives.size() != kBinCount) {
    throw Error(ErrorKind::SchemaError, "bin scale must have 101 boundaries and 100 representatives");
  }
}

void ScaleSet::add(BinScale scale) {
  auto key = std::pair{scale.task, scale.city.value_or("")};
  scales_.insert_or_assign(std::move(key), std::move(scale));
}

const BinScale& ScaleSet::get(IndicatorTask task, const std::string& city) const {
  if (const auto it = scales_.find({task, city}); it != scales_.end()) return it->second;
  if (const auto it = scales_.find({task, ""}); it != scales_.end()) return it->second;
  throw Error(ErrorKind::MissingScale,
              fmt::format("no bin scale for task {}{}", task_key(task), city.empty() ? "" : " in " + city));
}

bool ScaleSet::contains(IndicatorTask task, const std::string& city) const noexcept {
  return scales_.count({task, city}) > 0 || scales_.count({task, ""}) > 0;
}

std::vector<BinScale> ScaleSet::all() const {
  std::vector<BinScale> out;
  for (const auto& [key, scale] : scales_) out.push_back(scale);
  return out;
}

void to_json(nlohmann::json& j, const ScaleSet& set) {
  j = nlohmann::json{{"scales", set.all()}};
}

void from_json(const nlohmann::json& j, ScaleSet& set) {
  set = ScaleSet{};
  for (const auto& s : j.at("scales")) set.add(s.get<BinScale>());
}

}  // namespace svllm
