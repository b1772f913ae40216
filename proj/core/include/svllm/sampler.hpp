#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "svllm/geo.hpp"

namespace svllm {

struct SplitConfig {
  double train_frac = 0.6;
  double val_frac = 0.1;
  double test_frac = 0.3;
  std::uint64_t seed = 0;

  /// Throws InvalidFractions unless all fractions are >= 0 and sum to 1 (1e-12).
  void validate() const;
};

/// Farthest-first visiting order. `min_distance_m[i]` is the distance from
/// `ids[i]` to the nearest point selected before it; the first entry carries
/// the seed-pair distance (0 for a single point).
struct SampleOrder {
  std::vector<std::string> ids;
  std::vector<double> min_distance_m;
};

/// Greedy max-min traversal seeded by the pair at maximum haversine distance.
/// Ties (pair choice and per-step choice) go to the lexicographically
/// smallest id. Throws EmptyInput / DuplicateId.
SampleOrder farthest_first_order(std::span<const GeoPoint> points);

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

/// Largest-remainder sizes for n items under the fractions (train, val, test);
/// leftover units go to the largest remainders, earlier slots first on ties.
std::array<std::size_t, 3> apportion(std::size_t n, const SplitConfig& cfg);

/// Seeded uniform shuffle followed by contiguous slicing.
DatasetSplit split_dataset(std::span<const std::string> ids, const SplitConfig& cfg);

}  // namespace svllm
