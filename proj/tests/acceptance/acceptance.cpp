// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit on any
// failure. Tolerances and time limits are fixed here, not configurable.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "svllm/baselines.hpp"
#include "svllm/bias.hpp"
#include "svllm/binning.hpp"
#include "svllm/dataset.hpp"
#include "svllm/error.hpp"
#include "svllm/evaluation.hpp"
#include "svllm/pipeline.hpp"
#include "svllm/sampler.hpp"
#include "test_support.hpp"

namespace {

using namespace svllm;
using nlohmann::json;
namespace fs = std::filesystem;

constexpr double kRelTol = 1e-9;
constexpr double kHandTol = 1e-12;
constexpr double kClosureTol = 1e-12;

struct Outcome {
  bool ok = true;
  std::string detail;
};

// Collects the first few failure messages of a criterion.
class Check {
 public:
  void expect(bool cond, const std::string& what) {
    if (cond) return;
    ++failures_;
    if (failures_ <= 3) messages_ += (messages_.empty() ? "" : "; ") + what;
  }
  Outcome done(std::string detail) const {
    if (failures_ == 0) return {true, std::move(detail)};
    return {false, fmt::format("{} failure(s): {}", failures_, messages_)};
  }

 private:
  int failures_ = 0;
  std::string messages_;
};

bool rel_close(double a, double b, double tol = kRelTol) {
  return std::abs(a - b) <= tol * std::max(1.0, std::abs(b));
}

StageOptions offline(std::shared_ptr<Transport> net) {
  StageOptions o;
  o.live = std::move(net);
  return o;
}

// 1 -------------------------------------------------------------------------
Outcome metric_oracle() {
  Check c;
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<std::size_t> len(2, 500);
  std::normal_distribution<double> val(10.0, 5.0);
  std::normal_distribution<double> err(0.0, 2.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = len(rng);
    std::vector<double> y(n), yh(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = val(rng);
      yh[i] = y[i] + err(rng);
    }
    const double m = mae(y, yh), r = rmse(y, yh), q = r_squared(y, yh);
    c.expect(rel_close(m, testing::oracle_mae(y, yh)), fmt::format("trial {} MAE", trial));
    c.expect(rel_close(r, testing::oracle_rmse(y, yh)), fmt::format("trial {} RMSE", trial));
    c.expect(rel_close(q, testing::oracle_r2(y, yh)), fmt::format("trial {} R2", trial));
    c.expect(m <= r, fmt::format("trial {} MAE > RMSE", trial));
  }
  return c.done("1000 trials within 1e-9 relative, MAE <= RMSE throughout");
}

// 2 -------------------------------------------------------------------------
Outcome metric_hand_cases() {
  Check c;
  const std::vector<double> y{3.5, -1.0, 8.25, 0.0};
  c.expect(mae(y, y) == 0.0 && rmse(y, y) == 0.0 && r_squared(y, y) == 1.0, "y_hat == y is not (0, 0, 1) exactly");
  const std::vector<double> a{1, 2, 3}, b{2, 2, 2};
  c.expect(std::abs(mae(a, b) - 2.0 / 3.0) <= kHandTol, "MAE != 2/3");
  c.expect(std::abs(rmse(a, b) - std::sqrt(2.0 / 3.0)) <= kHandTol, "RMSE != sqrt(2/3)");
  c.expect(std::abs(r_squared(a, b)) <= kHandTol, "R2 != 0");
  const std::vector<double> flat{4, 4, 4};
  bool zero_var = false;
  try {
    r_squared(flat, a);
  } catch (const Error& e) {
    zero_var = e.kind() == ErrorKind::ZeroVariance;
  }
  c.expect(zero_var, "constant y did not raise ZeroVariance");
  return c.done("identity, [1,2,3] vs [2,2,2], constant truth");
}

// 3 -------------------------------------------------------------------------
Outcome knn_exactness() {
  Check c;
  std::mt19937_64 rng(3003);
  std::uniform_int_distribution<std::size_t> size(5, 1000);
  std::uniform_real_distribution<double> target(0.0, 9.9);
  const BBox box{22.25, 22.35, 114.10, 114.25};
  std::size_t queries = 0;
  for (int inst = 0; inst < 20; ++inst) {
    std::vector<LabeledPoint> train;
    for (const auto& p : testing::random_points(rng, size(rng), box, "t")) train.push_back({p, target(rng)});
    for (const auto& q : testing::random_points(rng, 50, box, "q")) {
      const double got = knn_predict(train, q, {5});
      const double want = testing::oracle_knn(train, q, 5);
      c.expect(got == want, fmt::format("instance {} query {}: {} vs {}", inst, q.id(), got, want));
      ++queries;
    }
  }
  return c.done(fmt::format("{} queries bitwise equal to exhaustive search (k=5)", queries));
}

// 4 -------------------------------------------------------------------------
void check_greedy(Check& c, std::span<const GeoPoint> pts, const SampleOrder& order, int inst) {
  std::map<std::string, GeoPoint> by_id;
  for (const auto& p : pts) by_id.emplace(p.id(), p);
  c.expect(order.ids.size() == pts.size(), fmt::format("instance {}: order is not a permutation", inst));
  if (order.ids.size() != pts.size()) return;
  double best = -1;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::max(best, haversine_distance(pts[i], pts[j]));
  }
  c.expect(haversine_distance(by_id.at(order.ids[0]), by_id.at(order.ids[1])) == best,
           fmt::format("instance {}: seed pair is not the farthest pair", inst));
  std::set<std::string> chosen{order.ids[0], order.ids[1]};
  for (std::size_t k = 2; k < order.ids.size(); ++k) {
    const auto gap = [&](const GeoPoint& p) {
      double m = INFINITY;
      for (const auto& s : chosen) m = std::min(m, haversine_distance(p, by_id.at(s)));
      return m;
    };
    const double picked = gap(by_id.at(order.ids[k]));
    for (const auto& p : pts) {
      if (!chosen.count(p.id())) c.expect(picked >= gap(p), fmt::format("instance {} step {}", inst, k));
    }
    chosen.insert(order.ids[k]);
  }
}

Outcome farthest_first() {
  Check c;
  std::mt19937_64 rng(4004);
  std::uniform_int_distribution<std::size_t> size(3, 200);
  for (int inst = 0; inst < 20; ++inst) {
    const auto pts = testing::random_points(rng, size(rng), BBox{-10, 10, -20, 20}, "p");
    check_greedy(c, pts, farthest_first_order(pts), inst);
  }
  const std::vector<GeoPoint> line{GeoPoint(0, 0, "0"), GeoPoint(0, 4, "4"), GeoPoint(0, 10, "10")};
  const auto order = farthest_first_order(line);
  c.expect(order.ids == std::vector<std::string>{"0", "10", "4"}, "{0,4,10} case is not [0,10,4]");
  return c.done("20 instances verified at every step; {0,4,10} -> [0,10,4]");
}

// 5 -------------------------------------------------------------------------
Outcome binning() {
  Check c;
  std::mt19937_64 rng(5005);
  std::uniform_real_distribution<double> u(-1000.0, 1000.0);
  std::vector<double> v(10000);
  for (auto& x : v) x = u(rng);
  std::sort(v.begin(), v.end());
  c.expect(std::adjacent_find(v.begin(), v.end()) == v.end(), "random values are not distinct");
  const BinScale s = fit_bin_scale(v, IndicatorTask::Ndvi);

  std::map<int, int> per_bin;
  BinLabel prev = BinLabel::from_index(0);
  for (double x : v) {
    const BinLabel b = to_bin(s, x);
    c.expect(b >= prev, fmt::format("not monotone at {}", x));
    prev = b;
    ++per_bin[b.index()];
    const auto [lo, hi] = bin_interval(s, b);
    const double back = from_bin(s, b);
    c.expect(lo <= back && back <= hi, fmt::format("from_bin outside bin for {}", x));
    c.expect(lo <= x && x <= hi, fmt::format("{} outside its own bin interval", x));
  }
  c.expect(to_bin(s, v.front()).str() == "0.0", "min does not map to 0.0");
  c.expect(to_bin(s, v.back()).str() == "9.9", "max does not map to 9.9");
  c.expect(per_bin.size() == 100, "not all 100 bins populated");
  for (const auto& [bin, n] : per_bin) c.expect(n == 100, fmt::format("bin {} holds {} values", bin, n));
  return c.done("10,000 values: monotone, extremes 0.0/9.9, 100 per bin, round trip in bin");
}

// 6 -------------------------------------------------------------------------
Outcome gbrt() {
  Check c;
  std::mt19937_64 rng(6006);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.2);
  GbrtConfig cfg;
  cfg.rounds = 10;
  for (int d = 0; d < 10; ++d) {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (int i = 0; i < 150; ++i) {
      const double a = u(rng), b = u(rng);
      x.push_back({a, b});
      y.push_back(std::cos(5 * a) * b + noise(rng));
    }
    const auto m = gbrt_fit(x, y, cfg);
    c.expect(m.train_sse.size() == 11, fmt::format("dataset {}: expected 11 SSE entries", d));
    for (std::size_t i = 1; i < m.train_sse.size(); ++i) {
      c.expect(m.train_sse[i] <= m.train_sse[i - 1], fmt::format("dataset {} round {}: SSE rose", d, i));
    }
    if (d == 0) {
      std::vector<std::size_t> idx(x.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      std::vector<std::vector<double>> xs;
      std::vector<double> ys;
      for (auto i : idx) {
        xs.push_back(x[i]);
        ys.push_back(y[i]);
      }
      c.expect(json(gbrt_fit(xs, ys, cfg)).dump() == json(m).dump(), "row permutation changed the model");
    }
  }
  // Step data whose mean and residuals are exact in binary, so "exact" can
  // be checked with ==. Arbitrary levels fit to round-off (~1e-30) instead.
  std::vector<std::vector<double>> sx;
  std::vector<double> sy;
  for (int i = 0; i < 32; ++i) {
    sx.push_back({i * 0.1, 1.0});
    sy.push_back(i < 8 ? -3.0 : 5.0);
  }
  GbrtConfig step;
  step.rounds = 1;
  step.max_depth = 1;
  step.learning_rate = 1.0;
  const auto m = gbrt_fit(sx, sy, step);
  double mse = 0;
  for (std::size_t i = 0; i < sx.size(); ++i) mse += std::pow(m.predict(sx[i]) - sy[i], 2);
  c.expect(mse == 0.0, fmt::format("step function MSE {}", mse / sx.size()));
  return c.done("SSE non-increasing on 10 datasets, step fit MSE 0, permutation invariant");
}

// 7 -------------------------------------------------------------------------
Outcome ablation_contracts() {
  Check c;
  testing::TempDir dir("svllm-acc7");
  auto cfg = testing::synth_config(dir.path(), 667);
  cfg.tasks = {IndicatorTask::PopulationDensity};
  cfg.keep_missing_images = true;  // every test sample stays eligible
  auto net = testing::refusing_transport();
  cmd_synth(cfg, offline(net));
  const auto sample = cmd_sample(cfg, offline(net));
  cmd_retrieve(cfg, offline(net));
  const std::size_t n_test = sample.counts.at("test").get<std::size_t>();
  c.expect(n_test == 200, fmt::format("expected 200 test samples, got {}", n_test));

  const RunPaths paths = run_paths(cfg);
  std::map<std::string, GeoContext> contexts;
  for (const auto& line : read_jsonl(paths.contexts())) {
    if (line.contains("context")) contexts[line.at("id")] = line.at("context").get<GeoContext>();
  }

  std::map<Preset, std::size_t> calls;
  std::size_t text_violations = 0, image_violations = 0, prompts = 0;
  for (Preset p : kAllPresets) {
    cfg.preset = p;
    const auto r = cmd_predict(cfg, offline(net));
    calls[p] = r.counts.at("gateway_calls").get<std::size_t>();
    const auto tag = prediction_tag(cfg.model.name, p);
    for (const auto& line : read_jsonl(paths.transcripts_dir() / (tag + ".jsonl"))) {
      ++prompts;
      const std::string text = line.at("system_text").get<std::string>() + line.at("user_text").get<std::string>();
      if (p == Preset::WithoutTEXT) {
        const auto& ctx = contexts.at(line.at("sample_id").get<std::string>());
        std::vector<std::string> frags{ctx.address.display_name};
        for (const auto& [k, v] : ctx.address.components) frags.push_back(v);
        for (const auto& place : ctx.nearby) frags.push_back(place.name);
        for (const auto& f : frags) {
          if (!f.empty() && text.find(f) != std::string::npos) ++text_violations;
        }
      }
      if (p == Preset::WithoutStreetview && !line.at("image_attachments").empty()) ++image_violations;
    }
  }
  c.expect(text_violations == 0, fmt::format("{} address/place leaks under WithoutTEXT", text_violations));
  c.expect(image_violations == 0, fmt::format("{} images attached under WithoutStreetview", image_violations));
  c.expect(calls[Preset::WithoutCOT] == n_test, fmt::format("WithoutCOT made {} calls", calls[Preset::WithoutCOT]));
  c.expect(calls[Preset::Full] == 2 * n_test, fmt::format("Full made {} calls", calls[Preset::Full]));
  c.expect(net->calls() == 0, "network was contacted");
  return c.done(fmt::format("|test|={}, {} prompts inspected, calls Full={} WithoutCOT={}", n_test, prompts,
                            calls[Preset::Full], calls[Preset::WithoutCOT]));
}

// 8 and 10 share one offline run.
struct ClosureRun {
  std::map<std::string, double> echo_r2;                   // task -> R2
  std::map<double, std::map<std::string, double>> noisy;   // sigma -> task -> R2
  std::size_t network_calls = 0;
  std::size_t upstream_calls = 0;
  std::size_t stages = 0;
};

std::map<std::string, double> pooled_llm_r2(const RunPaths& paths) {
  std::map<std::string, double> out;
  const auto m = json::parse(testing::read_text(paths.results_dir() / "metrics.json"));
  for (const auto& row : m.at("rows")) {
    if (row.at("model") == "llm" && row.at("space") == "bin" && row.at("city") == kPooledCity &&
        !row.at("r2").is_null()) {
      out[row.at("task")] = row.at("r2").get<double>();
    }
  }
  return out;
}

const ClosureRun& closure_run() {
  static const ClosureRun run = [] {
    ClosureRun r;
    testing::TempDir dir("svllm-acc8");
    auto cfg = testing::synth_config(dir.path(), 500);
    for (const auto& [task, f] : cfg.synth.functions) {
      if (f.kind != "gaussian_bump") throw std::logic_error("expected gaussian_bump surfaces");
    }
    auto net = testing::refusing_transport();
    const auto tally = [&](const std::vector<StageResult>& rs) {
      for (const auto& s : rs) {
        r.upstream_calls += s.upstream_calls;
        ++r.stages;
      }
    };
    tally(cmd_run(cfg, offline(net)));
    r.echo_r2 = pooled_llm_r2(run_paths(cfg));
    for (double sigma : {0.5, 1.0, 2.0}) {
      cfg.model.provider = ModelProvider::MockNoisy;
      cfg.model.noise_sigma = sigma;
      tally({cmd_predict(cfg, offline(net)), cmd_evaluate(cfg, offline(net))});
      r.noisy[sigma] = pooled_llm_r2(run_paths(cfg));
    }
    r.network_calls = net->calls();
    return r;
  }();
  return run;
}

Outcome closure() {
  Check c;
  const auto& r = closure_run();
  c.expect(r.echo_r2.size() == kAllTasks.size(), "missing tasks in the MockEcho report");
  for (const auto& [task, v] : r.echo_r2) {
    c.expect(std::abs(v - 1.0) <= kClosureTol, fmt::format("MockEcho {} R2 {}", task, v));
  }
  std::string trend;
  for (IndicatorTask t : kAllTasks) {
    const std::string k(task_key(t));
    const double a = r.noisy.at(0.5).at(k), b = r.noisy.at(1.0).at(k), d = r.noisy.at(2.0).at(k);
    c.expect(a > b && b > d, fmt::format("{}: R2 {:.4f}, {:.4f}, {:.4f} not decreasing", k, a, b, d));
    if (t == IndicatorTask::PopulationDensity) trend = fmt::format("{:.4f} > {:.4f} > {:.4f}", a, b, d);
  }
  return c.done("MockEcho R2 = 1 for all 5 tasks; population noisy R2 " + trend);
}

// 9 -------------------------------------------------------------------------
Outcome bias_analysis() {
  Check c;
  std::mt19937_64 rng(9009);
  std::uniform_int_distribution<int> count(0, 30);
  std::normal_distribution<double> noise(0.0, 0.03);
  std::vector<BiasRecord> recs;
  for (int i = 0; i < 300; ++i) {
    BiasRecord r;
    r.sample_id = fmt::format("b{:03d}", i);
    r.city = "Synthopolis";
    r.task = IndicatorTask::Ndvi;
    int total = 0;
    for (PoiCategory cat : kAllPoiCategories) {
      if (cat == PoiCategory::Total) continue;
      total += r.counts[static_cast<std::size_t>(cat)] = count(rng);
    }
    r.counts[static_cast<std::size_t>(PoiCategory::Total)] = total;
    r.bias = 0.01 * count_of(r.counts, PoiCategory::GreenSpace) + noise(rng);
    recs.push_back(r);
  }
  const auto table = bias_correlation_table(recs);
  c.expect(!table.positive.empty(), "no positive correlations");
  double top = 0;
  if (!table.positive.empty()) {
    top = table.positive.front().r;
    c.expect(table.positive.front().category == PoiCategory::GreenSpace,
             fmt::format("top positive is {}", category_label(table.positive.front().category)));
    c.expect(top > 0.8, fmt::format("top r {}", top));
  }
  const std::vector<double> x{1, 2, 3};
  c.expect(std::abs(pearson_r(x, std::vector<double>{2, 4, 6}) - 1.0) <= kHandTol, "r != 1");
  c.expect(std::abs(pearson_r(x, std::vector<double>{6, 4, 2}) + 1.0) <= kHandTol, "r != -1");
  c.expect(std::abs(pearson_r(x, std::vector<double>{1, 3, 2}) - 0.5) <= kHandTol, "r != 0.5");
  return c.done(fmt::format("GreenSpace ranked first with r = {:.4f}; hand cases 1, -1, 0.5 exact", top));
}

// 10 ------------------------------------------------------------------------
Outcome hermeticity() {
  Check c;
  const auto& r = closure_run();
  c.expect(r.network_calls == 0, fmt::format("{} requests reached the network layer", r.network_calls));
  c.expect(r.upstream_calls == 0, fmt::format("{} replay upstream calls", r.upstream_calls));
  // main() switches the live transport off; it must refuse before connecting.
  HttpTransport http(std::chrono::milliseconds(200));
  HttpRequest req;
  req.url = "http://127.0.0.1:9/";
  const auto resp = http.send(req);
  c.expect(resp.status == 0 && resp.error.find("SVLLM_OFFLINE") != std::string::npos,
           "HTTP transport did not refuse: " + resp.error);
  return c.done(fmt::format("{} stages replayed, 0 network calls, 0 upstream calls", r.stages));
}

// 11 ------------------------------------------------------------------------
Outcome report_fidelity() {
  Check c;
  // Stored values fed straight into the renderers.
  const std::map<IndicatorTask, std::array<double, 3>> t2{
      {IndicatorTask::PopulationDensity, {0.5265, 0.3127, 0.2894}},
      {IndicatorTask::HealthcareAccess, {0.4410, 0.2508, 0.2613}},
      {IndicatorTask::Ndvi, {0.6120, 0.4471, 0.4302}},
      {IndicatorTask::BuildingHeight, {0.4896, 0.3355, 0.3019}},
      {IndicatorTask::ImperviousSurface, {0.5224, 0.3981, 0.3770}}};
  const std::vector<ModelColumn> cols{{"llm", "LLM"}, {"knn", "KNN"}, {"gbrt", "GBRT"}};
  MetricsReport report;
  for (const auto& [task, vals] : t2) {
    for (std::size_t m = 0; m < cols.size(); ++m) {
      report.rows.push_back({std::string(kPooledCity), task, cols[m].model, ValueSpace::Bin, 1.0, 1.5, vals[m], 100});
    }
  }
  const std::vector<std::tuple<std::string, double, double, double>> a1{
      {"Tokyo", 0.6096, 0.9772, 0.7411}, {"Los Angeles", 1.8212, 2.2409, -0.6353}, {"Nairobi", 0.9013, 1.2007, 0.3318}};
  for (const auto& [city, mae_v, rmse_v, r2_v] : a1) {
    report.rows.push_back({city, IndicatorTask::PopulationDensity, "llm", ValueSpace::Bin, mae_v, rmse_v, r2_v, 50});
  }

  std::size_t cells = 0;
  const auto same = [&](const std::string& cell, double v, const std::string& where) {
    ++cells;
    c.expect(cell == fmt::format("{:.4f}", v), fmt::format("{}: '{}' vs {:.4f}", where, cell, v));
  };

  const Table table2 = model_comparison_table(report, cols, ValueSpace::Bin);
  c.expect(table2.header == std::vector<std::string>{"Task", "LLM", "KNN", "GBRT"}, "Table 2 header");
  c.expect(table2.rows.size() == 5, "Table 2 should have 5 task rows");
  for (std::size_t i = 0; i < table2.rows.size() && i < kAllTasks.size(); ++i) {
    c.expect(table2.rows[i][0] == info(kAllTasks[i]).short_name, "Table 2 row label");
    for (std::size_t m = 0; m < 3; ++m) same(table2.rows[i][m + 1], t2.at(kAllTasks[i])[m], "Table 2");
  }
  c.expect(render_csv(table2).find("Population,0.5265,0.3127,0.2894") != std::string::npos, "Table 2 CSV row");

  std::vector<std::string> cities;
  for (const auto& row : a1) cities.push_back(std::get<0>(row));
  const std::vector<ModelColumn> llm_only{{"llm", "LLM"}};
  const Table tableA1 = per_city_table(report, IndicatorTask::PopulationDensity, llm_only, cities, ValueSpace::Bin);
  c.expect(tableA1.header == std::vector<std::string>{"City", "LLM MAE", "LLM RMSE", "LLM R2"},
           "Table A1 header");
  for (std::size_t i = 0; i < a1.size() && i < tableA1.rows.size(); ++i) {
    const auto& [city, mae_v, rmse_v, r2_v] = a1[i];
    c.expect(tableA1.rows[i][0] == city, "Table A1 city");
    same(tableA1.rows[i][1], mae_v, city + " MAE");
    same(tableA1.rows[i][2], rmse_v, city + " RMSE");
    same(tableA1.rows[i][3], r2_v, city + " R2");
  }

  const std::map<Preset, std::map<std::string, double>> t3{
      {Preset::Full, {{"Tokyo", 0.7411}, {"Nairobi", 0.3318}}},
      {Preset::WithoutCOT, {{"Tokyo", 0.6932}, {"Nairobi", 0.2875}}},
      {Preset::WithoutStreetview, {{"Tokyo", 0.7013}, {"Nairobi", 0.3001}}},
      {Preset::WithoutTEXT, {{"Tokyo", 0.5127}, {"Nairobi", 0.1904}}}};
  std::vector<AblationRun> runs;
  for (Preset p : kAllPresets) {
    AblationRun run;
    run.preset = p;
    run.flags = preset_flags(p);
    for (const auto& [city, v] : t3.at(p)) run.r2_by_city[city] = v;
    runs.push_back(run);
  }
  const std::vector<std::string> t3_cities{"Tokyo", "Nairobi"};
  const Table table3 = ablation_table(runs, t3_cities);
  c.expect(table3.header ==
               std::vector<std::string>{"City", "Full", "WithoutCOT", "WithoutStreetview", "WithoutTEXT"},
           "Table 3 header");
  for (std::size_t i = 0; i < t3_cities.size(); ++i) {
    for (std::size_t p = 0; p < kAllPresets.size(); ++p) {
      same(table3.rows[i][p + 1], t3.at(kAllPresets[p]).at(t3_cities[i]), "Table 3");
    }
  }
  const json j = render_json(table3);
  c.expect(j.at("rows").at(0).at("WithoutTEXT") == "0.5127", "Table 3 JSON cell");
  return c.done(fmt::format("{} cells match their inputs at 4 dp across Tables 2, 3, A1.1", cells));
}

// 12 ------------------------------------------------------------------------
Outcome split_apportionment() {
  Check c;
  const SplitConfig base;
  c.expect(apportion(10, base) == std::array<std::size_t, 3>{6, 1, 3}, "10 -> 6/1/3");
  c.expect(apportion(7, base) == std::array<std::size_t, 3>{4, 1, 2}, "7 -> 4/1/2");
  std::mt19937_64 rng(1212);
  std::uniform_int_distribution<std::size_t> size(1, 400);
  for (int s = 0; s < 100; ++s) {
    SplitConfig cfg;
    cfg.seed = rng();
    const std::size_t n = size(rng);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(fmt::format("id{:04d}", i));
    const auto a = split_dataset(ids, cfg);
    const auto b = split_dataset(ids, cfg);
    c.expect(a.train == b.train && a.val == b.val && a.test == b.test, fmt::format("seed {} not deterministic", s));
    std::set<std::string> all;
    all.insert(a.train.begin(), a.train.end());
    all.insert(a.val.begin(), a.val.end());
    all.insert(a.test.begin(), a.test.end());
    c.expect(all.size() == n && a.train.size() + a.val.size() + a.test.size() == n,
             fmt::format("seed {}: splits overlap or drop ids", s));
    const auto sizes = apportion(n, cfg);
    c.expect(a.train.size() == sizes[0] && a.val.size() == sizes[1] && a.test.size() == sizes[2],
             fmt::format("seed {}: sizes differ from apportion", s));
  }
  return c.done("10 -> 6/1/3, 7 -> 4/1/2; 100 seeds disjoint, complete, deterministic");
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;  // 0: no runtime bound
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  ::setenv("SVLLM_OFFLINE", "1", 1);
  const std::vector<Criterion> criteria{
      {1, "metric-oracle-equivalence", 5.0, metric_oracle},
      {2, "metric-hand-cases", 0.0, metric_hand_cases},
      {3, "knn-exactness", 10.0, knn_exactness},
      {4, "farthest-first-greedy", 0.0, farthest_first},
      {5, "binning-properties", 0.0, binning},
      {6, "gbrt-properties", 0.0, gbrt},
      {7, "ablation-contracts", 0.0, ablation_contracts},
      {8, "end-to-end-oracle-closure", 60.0, closure},
      {9, "bias-analysis", 0.0, bias_analysis},
      {10, "replay-hermeticity", 0.0, hermeticity},
      {11, "report-fidelity", 0.0, report_fidelity},
      {12, "split-apportionment", 0.0, split_apportionment},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = cr.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (out.ok && cr.limit_s > 0 && secs >= cr.limit_s) {
      out = {false, fmt::format("took {:.2f} s, limit {:.0f} s", secs, cr.limit_s)};
    }
    if (!out.ok) ++failed;
    std::printf("%s %2d %-28s %s [%.2f s%s]\n", out.ok ? "PASS" : "FAIL", cr.id, cr.name, out.detail.c_str(), secs,
                cr.limit_s > 0 ? fmt::format(", limit {:.0f} s", cr.limit_s).c_str() : "");
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
