#include "svllm/bias.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "svllm/error.hpp"
#include "svllm/http.hpp"

namespace svllm {

using nlohmann::json;

std::string_view category_label(PoiCategory c) noexcept {
  switch (c) {
    case PoiCategory::Residential: return "Residential";
    case PoiCategory::CommercialAndBusinessFacilities: return "Commercial and Business Facilities";
    case PoiCategory::Industrial: return "Industrial";
    case PoiCategory::AdministrationAndPublicServices: return "Administration and Public Services";
    case PoiCategory::ScienceAndEducation: return "Science and Education";
    case PoiCategory::GreenSpace: return "Green Space";
    case PoiCategory::Other: return "Other";
    case PoiCategory::Total: return "Total";
  }
  return "Other";
}

std::string_view category_key(PoiCategory c) noexcept {
  switch (c) {
    case PoiCategory::Residential: return "residential";
    case PoiCategory::CommercialAndBusinessFacilities: return "commercial";
    case PoiCategory::Industrial: return "industrial";
    case PoiCategory::AdministrationAndPublicServices: return "administration";
    case PoiCategory::ScienceAndEducation: return "education";
    case PoiCategory::GreenSpace: return "green_space";
    case PoiCategory::Other: return "other";
    case PoiCategory::Total: return "total";
  }
  return "other";
}

std::optional<PoiCategory> parse_category(std::string_view text) noexcept {
  for (auto c : kAllPoiCategories) {
    if (text == category_key(c) || text == category_label(c)) return c;
  }
  return std::nullopt;
}

PoiTaxonomy PoiTaxonomy::defaults() {
  using C = PoiCategory;
  std::vector<TagRule> rules;
  const auto add = [&](C c, std::string key, std::initializer_list<std::string_view> values) {
    if (values.size() == 0) {
      rules.push_back({c, key, ""});
      return;
    }
    for (auto v : values) rules.push_back({c, key, std::string(v)});
  };
  // Specific uses first so that generic keys (office=*, shop=*) do not
  // swallow schools or town halls.
  add(C::ScienceAndEducation, "amenity",
      {"school", "university", "college", "kindergarten", "library", "research_institute"});
  add(C::ScienceAndEducation, "building", {"school", "university", "college"});
  add(C::ScienceAndEducation, "office", {"research", "educational_institution"});
  add(C::AdministrationAndPublicServices, "amenity",
      {"townhall", "police", "fire_station", "post_office", "courthouse", "hospital", "clinic",
       "doctors", "community_centre", "social_facility", "public_building"});
  add(C::AdministrationAndPublicServices, "office", {"government", "diplomatic"});
  add(C::AdministrationAndPublicServices, "building", {"public", "government", "civic", "hospital"});
  add(C::AdministrationAndPublicServices, "healthcare", {});
  add(C::Residential, "building",
      {"residential", "apartments", "house", "detached", "semidetached_house", "terrace",
       "dormitory", "bungalow"});
  add(C::Residential, "landuse", {"residential"});
  add(C::GreenSpace, "leisure", {"park", "garden", "nature_reserve", "playground", "pitch"});
  add(C::GreenSpace, "landuse",
      {"grass", "forest", "meadow", "recreation_ground", "village_green", "cemetery"});
  add(C::GreenSpace, "natural", {"wood", "scrub", "grassland", "tree", "heath", "wetland"});
  add(C::Industrial, "landuse", {"industrial", "railway", "port"});
  add(C::Industrial, "building", {"industrial", "warehouse", "factory"});
  add(C::Industrial, "man_made", {"works", "storage_tank", "silo"});
  add(C::Industrial, "craft", {});
  add(C::CommercialAndBusinessFacilities, "shop", {});
  add(C::CommercialAndBusinessFacilities, "office", {});
  add(C::CommercialAndBusinessFacilities, "amenity",
      {"restaurant", "cafe", "bank", "fast_food", "bar", "pub", "marketplace", "cinema",
       "fuel"});
  add(C::CommercialAndBusinessFacilities, "landuse", {"commercial", "retail"});
  add(C::CommercialAndBusinessFacilities, "building", {"commercial", "retail", "office", "hotel"});
  add(C::CommercialAndBusinessFacilities, "tourism", {"hotel", "hostel", "motel"});
  return PoiTaxonomy(std::move(rules));
}

PoiTaxonomy PoiTaxonomy::load(const std::filesystem::path& path) {
  try {
    const auto doc = json::parse(read_file(path));
    std::vector<TagRule> rules;
    for (const auto& r : doc.at("rules")) {
      const auto c = parse_category(r.at("category").get<std::string>());
      if (!c || *c == PoiCategory::Total) {
        throw Error(ErrorKind::ConfigError,
                    fmt::format("taxonomy {}: bad category '{}'", path.string(), r.at("category").dump()));
      }
      rules.push_back({*c, r.at("key").get<std::string>(), r.value("value", "")});
    }
    return PoiTaxonomy(std::move(rules));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigError, fmt::format("taxonomy {}: {}", path.string(), e.what()));
  }
}

PoiCategory PoiTaxonomy::classify(const std::map<std::string, std::string>& tags) const {
  for (const auto& rule : rules_) {
    const auto it = tags.find(rule.key);
    if (it != tags.end() && (rule.value.empty() || it->second == rule.value)) return rule.category;
  }
  return PoiCategory::Other;
}

void to_json(json& j, const PoiTaxonomy& t) {
  json rules = json::array();
  for (const auto& r : t.rules()) {
    json rule = {{"category", category_key(r.category)}, {"key", r.key}};
    if (!r.value.empty()) rule["value"] = r.value;
    rules.push_back(std::move(rule));
  }
  j = json{{"rules", rules}};
}

PoiCounts count_pois(std::span<const TaggedElement> elements, const GeoPoint& center,
                     double radius_m, const PoiTaxonomy& taxonomy) {
  PoiCounts counts{};
  for (const auto& e : elements) {
    if (haversine_distance(center, e.location) > radius_m) continue;
    ++counts[static_cast<std::size_t>(taxonomy.classify(e.tags))];
    ++counts[static_cast<std::size_t>(PoiCategory::Total)];
  }
  return counts;
}

PoiCounts poi_counts(GeoRetriever& retriever, const GeoPoint& point, double radius_m,
                     const PoiTaxonomy& taxonomy) {
  const auto elements = retriever.tagged_elements(point, radius_m);
  return count_pois(elements, point, radius_m, taxonomy);
}

// ---------------------------------------------------------------------------

double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error(ErrorKind::LengthMismatch, fmt::format("pearson_r: {} vs {} values", x.size(), y.size()));
  }
  if (x.size() < 2) throw Error(ErrorKind::TooFewValues, "pearson_r needs at least 2 pairs");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw Error(ErrorKind::NonFinite, fmt::format("pearson_r: non-finite value at index {}", i));
    }
  }
  const auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
  };
  if (constant(x) || constant(y)) throw Error(ErrorKind::ZeroVariance, "pearson_r: constant input");

  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

BiasTable bias_correlation_table(std::span<const BiasRecord> records, std::size_t top_n) {
  std::map<std::pair<std::string, IndicatorTask>, std::vector<const BiasRecord*>> groups;
  for (const auto& r : records) groups[{r.city, r.task}].push_back(&r);

  BiasTable table;
  for (const auto& [key, members] : groups) {
    const auto& [city, task] = key;
    std::vector<double> bias;
    for (const auto* m : members) bias.push_back(m->bias);
    for (PoiCategory c : kAllPoiCategories) {
      std::vector<double> counts;
      for (const auto* m : members) counts.push_back(count_of(m->counts, c));
      try {
        table.cells.push_back({city, task, c, pearson_r(counts, bias), members.size()});
      } catch (const Error& e) {
        table.notes.push_back(fmt::format("{} / {} / {}: skipped ({})", city, info(task).metric_label,
                                          category_label(c), e.message()));
      }
    }
  }

  const auto key = [](const BiasCell& c) { return std::tie(c.city, c.task, c.category); };
  for (const auto& c : table.cells) {
    if (c.r > 0) table.positive.push_back(c);
    if (c.r < 0) table.negative.push_back(c);
  }
  std::stable_sort(table.positive.begin(), table.positive.end(), [&](const auto& a, const auto& b) {
    return a.r != b.r ? a.r > b.r : key(a) < key(b);
  });
  std::stable_sort(table.negative.begin(), table.negative.end(), [&](const auto& a, const auto& b) {
    return a.r != b.r ? a.r < b.r : key(a) < key(b);
  });
  if (table.positive.size() > top_n) table.positive.resize(top_n);
  if (table.negative.size() > top_n) table.negative.resize(top_n);
  return table;
}

Table bias_section_table(std::span<const BiasCell> cells, std::string title) {
  Table t;
  t.title = std::move(title);
  t.header = {"City", "Metric", "POI Column", "Correlation with Difference"};
  for (const auto& c : cells) {
    t.rows.push_back({c.city, std::string(info(c.task).metric_label),
                      std::string(category_label(c.category)), format_metric(c.r)});
  }
  return t;
}

Table bias_matrix_table(const BiasTable& table) {
  Table t;
  t.title = "Correlation of POI counts with prediction bias";
  t.header = {"City", "Metric"};
  for (auto c : kAllPoiCategories) t.header.emplace_back(category_label(c));
  std::map<std::pair<std::string, IndicatorTask>, std::vector<std::string>> rows;
  for (const auto& c : table.cells) {
    auto& row = rows[{c.city, c.task}];
    if (row.empty()) row.assign(kPoiCategoryCount, "n/a");
    row[static_cast<std::size_t>(c.category)] = format_metric(c.r);
  }
  for (auto& [key, cells] : rows) {
    std::vector<std::string> row{key.first, std::string(info(key.second).metric_label)};
    row.insert(row.end(), cells.begin(), cells.end());
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace svllm
