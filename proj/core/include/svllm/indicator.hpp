#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace svllm {

/// The five tri-environmental prediction targets.
enum class IndicatorTask {
  PopulationDensity,
  HealthcareAccess,
  Ndvi,
  BuildingHeight,
  ImperviousSurface,
};

inline constexpr std::array<IndicatorTask, 5> kAllTasks = {
    IndicatorTask::PopulationDensity, IndicatorTask::HealthcareAccess, IndicatorTask::Ndvi,
    IndicatorTask::BuildingHeight, IndicatorTask::ImperviousSurface};

struct IndicatorInfo {
  IndicatorTask task;
  std::string_view key;           // config / file identifier, e.g. "population"
  std::string_view long_name;     // taxonomy name, e.g. "Accessibility to healthcare"
  std::string_view metric_label;  // bias-table label, e.g. "Population Density"
  std::string_view short_name;    // model-comparison row label, e.g. "Population"
  std::string_view dimension;     // Social / Natural / Built
  std::string_view unit;
  std::string_view provider;
  int year;
};

const IndicatorInfo& info(IndicatorTask task) noexcept;

std::string_view task_key(IndicatorTask task) noexcept;

/// Accepts the key ("population") or any of the labels, case-sensitive.
std::optional<IndicatorTask> parse_task(std::string_view text) noexcept;

}  // namespace svllm
