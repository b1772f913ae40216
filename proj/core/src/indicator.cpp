#include "svllm/indicator.hpp"

namespace svllm {

namespace {

constexpr std::array<IndicatorInfo, 5> kInfo = {{
    {IndicatorTask::PopulationDensity, "population", "Population Density", "Population Density",
     "Population", "Social",
     "people per km^2", "WorldPop", 2020},
    {IndicatorTask::HealthcareAccess, "health", "Accessibility to healthcare", "Health", "Health", "Social",
     "minutes to nearest facility", "MAP", 2020},
    {IndicatorTask::Ndvi, "ndvi", "NDVI", "NDVI", "NDVI", "Natural", "index [-1, 1]",
     "NASA LP DAAC at the USGS EROS Center", 2023},
    {IndicatorTask::BuildingHeight, "height", "Building Height", "Building Height", "Building Height", "Built",
     "meters", "EC JRC", 2023},
    {IndicatorTask::ImperviousSurface, "impervious", "Impervious Surface", "Impervious Surface",
     "Impervious Surface",
     "Built", "fraction sealed", "EC JRC", 2023},
}};

}  // namespace

const IndicatorInfo& info(IndicatorTask task) noexcept {
  return kInfo[static_cast<std::size_t>(task)];
}

std::string_view task_key(IndicatorTask task) noexcept { return info(task).key; }

std::optional<IndicatorTask> parse_task(std::string_view text) noexcept {
  for (const auto& i : kInfo) {
    if (text == i.key || text == i.long_name || text == i.metric_label || text == i.short_name) return i.task;
  }
  return std::nullopt;
}

}  // namespace svllm
