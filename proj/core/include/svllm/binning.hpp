#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "svllm/indicator.hpp"

namespace svllm {

inline constexpr int kBinCount = 100;

/// One-decimal answer label in {0.0, 0.1, ..., 9.9}, stored as its bin index.
class BinLabel {
 public:
  constexpr BinLabel() = default;

  /// Throws Error(ParseError) unless 0 <= index <= 99.
  static BinLabel from_index(int index);
  /// Nearest tenth, clamped to [0.0, 9.9]. Throws NonFinite on NaN/inf.
  static BinLabel from_value(double value);

  constexpr int index() const noexcept { return index_; }
  constexpr double value() const noexcept { return index_ / 10.0; }
  /// "7.3"
  std::string str() const;

  friend constexpr auto operator<=>(BinLabel, BinLabel) = default;

 private:
  explicit constexpr BinLabel(int index) : index_(index) {}
  int index_ = 0;
};

/// Rank-based 100-bin discretization fitted on one task's ground truth.
/// Bin i holds the sorted values with rank r where floor(100 r / n) == i;
/// boundaries[i + 1] is the largest value in bins <= i, so a value equal to a
/// boundary maps to the lower bin.
struct BinScale {
  IndicatorTask task = IndicatorTask::PopulationDensity;
  std::optional<std::string> city;  // set for per-city scales
  std::vector<double> boundaries;   // 101 ascending thresholds
  std::vector<double> representatives;  // 100 per-bin medians
  std::size_t n_fit = 0;
};

struct BinFitOptions {
  std::size_t min_values = 100;
};

/// Throws TooFewValues (below options.min_values or empty) and NonFinite.
BinScale fit_bin_scale(std::span<const double> values, IndicatorTask task,
                       const BinFitOptions& options = {});

/// Monotone; below the fitted min gives 0.0, above the max 9.9. Throws NonFinite.
BinLabel to_bin(const BinScale& scale, double value);

/// Representative (bin median) for the label.
double from_bin(const BinScale& scale, BinLabel label) noexcept;

/// Closed interval [boundaries[i], boundaries[i + 1]] of the label's bin.
std::pair<double, double> bin_interval(const BinScale& scale, BinLabel label) noexcept;

void to_json(nlohmann::json& j, const BinScale& scale);
void from_json(const nlohmann::json& j, BinScale& scale);

/// Scales keyed by (task, city). Lookups fall back from the city-specific
/// scale to the task-wide one.
class ScaleSet {
 public:
  void add(BinScale scale);
  /// Throws Error(MissingScale) when neither scale exists.
  const BinScale& get(IndicatorTask task, const std::string& city = {}) const;
  bool contains(IndicatorTask task, const std::string& city = {}) const noexcept;
  std::vector<BinScale> all() const;

 private:
  std::map<std::pair<IndicatorTask, std::string>, BinScale> scales_;
};

void to_json(nlohmann::json& j, const ScaleSet& set);
void from_json(const nlohmann::json& j, ScaleSet& set);

}  // namespace svllm
