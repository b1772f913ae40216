#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "svllm/evaluation.hpp"
#include "svllm/indicator.hpp"
#include "svllm/retrieval.hpp"

namespace svllm {

enum class PoiCategory {
  Residential,
  CommercialAndBusinessFacilities,
  Industrial,
  AdministrationAndPublicServices,
  ScienceAndEducation,
  GreenSpace,
  Other,
  Total,
};

inline constexpr std::size_t kPoiCategoryCount = 8;

inline constexpr std::array<PoiCategory, kPoiCategoryCount> kAllPoiCategories = {
    PoiCategory::Residential,         PoiCategory::CommercialAndBusinessFacilities,
    PoiCategory::Industrial,          PoiCategory::AdministrationAndPublicServices,
    PoiCategory::ScienceAndEducation, PoiCategory::GreenSpace,
    PoiCategory::Other,               PoiCategory::Total};

/// "Commercial and Business Facilities", ...
std::string_view category_label(PoiCategory c) noexcept;
/// "commercial", "green_space", ...
std::string_view category_key(PoiCategory c) noexcept;
std::optional<PoiCategory> parse_category(std::string_view text) noexcept;

/// Matches `key=value`, or any value of `key` when `value` is empty.
struct TagRule {
  PoiCategory category = PoiCategory::Other;
  std::string key;
  std::string value;
};

/// Ordered OSM tag rules; the first matching rule decides the category and
/// unmatched elements count as Other.
class PoiTaxonomy {
 public:
  explicit PoiTaxonomy(std::vector<TagRule> rules) : rules_(std::move(rules)) {}

  static PoiTaxonomy defaults();
  /// JSON: {"rules": [{"category": "residential", "key": "building", "value": "house"}, ...]}
  static PoiTaxonomy load(const std::filesystem::path& path);

  PoiCategory classify(const std::map<std::string, std::string>& tags) const;
  const std::vector<TagRule>& rules() const noexcept { return rules_; }

 private:
  std::vector<TagRule> rules_;
};

void to_json(nlohmann::json& j, const PoiTaxonomy& t);

/// Counts indexed by PoiCategory; Total is the sum of the others.
using PoiCounts = std::array<int, kPoiCategoryCount>;

inline int count_of(const PoiCounts& c, PoiCategory cat) noexcept {
  return c[static_cast<std::size_t>(cat)];
}

/// Elements within `radius_m` (haversine) of `center`, classified.
PoiCounts count_pois(std::span<const TaggedElement> elements, const GeoPoint& center,
                     double radius_m, const PoiTaxonomy& taxonomy);

/// Fetches tagged elements through the retriever (cached, fixture-aware)
/// and counts them. Throws ProviderError / FixtureMiss.
PoiCounts poi_counts(GeoRetriever& retriever, const GeoPoint& point, double radius_m,
                     const PoiTaxonomy& taxonomy);

struct BiasRecord {
  std::string sample_id;
  std::string city;
  IndicatorTask task = IndicatorTask::PopulationDensity;
  double bias = 0.0;  // predicted - actual, bin units
  PoiCounts counts{};
};

/// Signed Pearson product-moment correlation. Throws LengthMismatch,
/// TooFewValues (n < 2), NonFinite, ZeroVariance.
double pearson_r(std::span<const double> x, std::span<const double> y);

struct BiasCell {
  std::string city;
  IndicatorTask task = IndicatorTask::PopulationDensity;
  PoiCategory category = PoiCategory::Other;
  double r = 0.0;
  std::size_t n = 0;
};

struct BiasTable {
  std::vector<BiasCell> positive;  // r > 0, descending
  std::vector<BiasCell> negative;  // r < 0, ascending
  std::vector<BiasCell> cells;     // every computed cell, (city, task, category) order
  std::vector<std::string> notes;  // skipped cells
};

/// One r per (city, task, category) over the records of that group. Ties in
/// the rankings are broken by (city, task, category).
BiasTable bias_correlation_table(std::span<const BiasRecord> records, std::size_t top_n = 10);

/// Columns City, Metric, POI Column, Correlation with Difference.
Table bias_section_table(std::span<const BiasCell> cells, std::string title);
/// (city, task) rows x category columns of r.
Table bias_matrix_table(const BiasTable& table);

}  // namespace svllm
