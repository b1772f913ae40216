#include "svllm/sampler.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <tuple>
#include <unordered_set>

#include <fmt/core.h>

#include "svllm/error.hpp"

namespace svllm {

void SplitConfig::validate() const {
  if (train_frac < 0 || val_frac < 0 || test_frac < 0 || !std::isfinite(train_frac) ||
      !std::isfinite(val_frac) || !std::isfinite(test_frac)) {
    throw Error(ErrorKind::InvalidFractions, "split fractions must be finite and non-negative");
  }
  const double sum = train_frac + val_frac + test_frac;
  if (std::abs(sum - 1.0) > 1e-12) {
    throw Error(ErrorKind::InvalidFractions,
                fmt::format("split fractions sum to {:.17g}, expected 1", sum));
  }
}

SampleOrder farthest_first_order(std::span<const GeoPoint> points) {
  const std::size_t n = points.size();
  if (n == 0) throw Error(ErrorKind::EmptyInput, "farthest_first_order of zero points");
  {
    std::unordered_set<std::string> seen;
    for (const auto& p : points) {
      if (!seen.insert(p.id()).second) throw Error(ErrorKind::DuplicateId, p.id());
    }
  }

  SampleOrder order;
  order.ids.reserve(n);
  order.min_distance_m.reserve(n);
  if (n == 1) {
    order.ids.push_back(points[0].id());
    order.min_distance_m.push_back(0.0);
    return order;
  }

  // Seed pair: maximum distance, then smallest (first id, second id) with first < second.
  std::size_t best_a = 0, best_b = 0;
  double best_d = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = haversine_distance(points[i], points[j]);
      std::size_t a = i, b = j;
      if (points[b].id() < points[a].id()) std::swap(a, b);
      if (d > best_d ||
          (d == best_d && std::tie(points[a].id(), points[b].id()) <
                              std::tie(points[best_a].id(), points[best_b].id()))) {
        best_d = d;
        best_a = a;
        best_b = b;
      }
    }
  }

  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::vector<char> selected(n, 0);
  auto select = [&](std::size_t idx, double recorded) {
    selected[idx] = 1;
    order.ids.push_back(points[idx].id());
    order.min_distance_m.push_back(recorded);
    for (std::size_t k = 0; k < n; ++k) {
      if (!selected[k]) nearest[k] = std::min(nearest[k], haversine_distance(points[idx], points[k]));
    }
  };
  select(best_a, best_d);
  select(best_b, best_d);

  for (std::size_t step = 2; step < n; ++step) {
    std::size_t pick = n;
    for (std::size_t k = 0; k < n; ++k) {
      if (selected[k]) continue;
      if (pick == n || nearest[k] > nearest[pick] ||
          (nearest[k] == nearest[pick] && points[k].id() < points[pick].id())) {
        pick = k;
      }
    }
    select(pick, nearest[pick]);
  }
  return order;
}

std::array<std::size_t, 3> apportion(std::size_t n, const SplitConfig& cfg) {
  cfg.validate();
  const std::array<double, 3> fracs = {cfg.train_frac, cfg.val_frac, cfg.test_frac};
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainders{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double quota = static_cast<double>(n) * fracs[i];
    // Guard against quotas like 5.9999999999999991 that are integral in exact arithmetic.
    double whole = std::floor(quota + 1e-9);
    whole = std::min(whole, static_cast<double>(n));
    sizes[i] = static_cast<std::size_t>(whole);
    remainders[i] = std::max(0.0, quota - whole);
    assigned += sizes[i];
  }
  std::array<std::size_t, 3> rank = {0, 1, 2};
  std::stable_sort(rank.begin(), rank.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  for (std::size_t r = 0; assigned < n; r = (r + 1) % 3) {
    ++sizes[rank[r]];
    ++assigned;
  }
  while (assigned > n) {
    // Only reachable through the epsilon guard; trim from the smallest remainder.
    for (auto it = rank.rbegin(); it != rank.rend() && assigned > n; ++it) {
      if (sizes[*it] > 0) {
        --sizes[*it];
        --assigned;
      }
    }
  }
  return sizes;
}

DatasetSplit split_dataset(std::span<const std::string> ids, const SplitConfig& cfg) {
  if (ids.empty()) throw Error(ErrorKind::EmptyInput, "split_dataset of zero ids");
  const auto sizes = apportion(ids.size(), cfg);

  std::vector<std::string> shuffled(ids.begin(), ids.end());
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);

  DatasetSplit out;
  auto first = shuffled.begin();
  out.train.assign(first, first + static_cast<std::ptrdiff_t>(sizes[0]));
  first += static_cast<std::ptrdiff_t>(sizes[0]);
  out.val.assign(first, first + static_cast<std::ptrdiff_t>(sizes[1]));
  first += static_cast<std::ptrdiff_t>(sizes[1]);
  out.test.assign(first, shuffled.end());
  return out;
}

}  // namespace svllm
