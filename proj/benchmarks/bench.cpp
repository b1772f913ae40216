#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "svllm/baselines.hpp"
#include "svllm/binning.hpp"
#include "svllm/evaluation.hpp"
#include "svllm/geo.hpp"
#include "svllm/sampler.hpp"

namespace {

using namespace svllm;

std::vector<GeoPoint> points(std::size_t n, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lat(22.25, 22.35), lon(114.10, 114.25);
  std::vector<GeoPoint> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = lat(rng);
    out.emplace_back(a, lon(rng), "p" + std::to_string(i));
  }
  return out;
}

std::vector<double> values(std::size_t n, std::uint64_t seed = 2) {
  std::mt19937_64 rng(seed);
  std::lognormal_distribution<double> d(5.0, 1.0);
  std::vector<double> out(n);
  for (auto& v : out) v = d(rng);
  return out;
}

void BM_Haversine(benchmark::State& state) {
  const auto pts = points(1024);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(haversine_distance(pts[i & 1023], pts[(i * 7 + 3) & 1023]));
    ++i;
  }
}
BENCHMARK(BM_Haversine);

void BM_FarthestFirst(benchmark::State& state) {
  const auto pts = points(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(farthest_first_order(pts));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_FarthestFirst)->RangeMultiplier(2)->Range(128, 2048)->Complexity(benchmark::oNSquared);

void BM_Knn(benchmark::State& state) {
  const auto pts = points(static_cast<std::size_t>(state.range(0)));
  const auto ys = values(pts.size());
  std::vector<LabeledPoint> train;
  for (std::size_t i = 0; i < pts.size(); ++i) train.push_back({pts[i], ys[i]});
  const auto queries = points(64, 9);
  std::size_t q = 0;
  for (auto _ : state) benchmark::DoNotOptimize(knn_predict(train, queries[q++ & 63], {5}));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Knn)->RangeMultiplier(4)->Range(256, 16384)->Complexity(benchmark::oN);

void BM_GbrtFit(benchmark::State& state) {
  const auto pts = points(static_cast<std::size_t>(state.range(0)));
  const auto ys = values(pts.size());
  std::vector<std::vector<double>> x;
  for (const auto& p : pts) x.push_back(coordinate_features(p));
  for (auto _ : state) benchmark::DoNotOptimize(gbrt_fit(x, ys));
}
BENCHMARK(BM_GbrtFit)->Arg(300)->Arg(1000)->Arg(3000);

void BM_BinFitAndMap(benchmark::State& state) {
  const auto v = values(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    const auto s = fit_bin_scale(v, IndicatorTask::PopulationDensity);
    int acc = 0;
    for (double x : v) acc += to_bin(s, x).index();
    benchmark::DoNotOptimize(acc);
  }
}
BENCHMARK(BM_BinFitAndMap)->Arg(1000)->Arg(100000);

void BM_Metrics(benchmark::State& state) {
  const auto y = values(static_cast<std::size_t>(state.range(0)), 3);
  const auto yh = values(y.size(), 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mae(y, yh));
    benchmark::DoNotOptimize(rmse(y, yh));
    benchmark::DoNotOptimize(r_squared(y, yh));
  }
}
BENCHMARK(BM_Metrics)->Arg(150)->Arg(100000);

}  // namespace
BENCHMARK_MAIN();
