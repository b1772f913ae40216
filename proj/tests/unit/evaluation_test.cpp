#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "svllm/evaluation.hpp"
#include "test_support.hpp"

namespace svllm {
namespace {

TEST(Metrics, HandCase) {
  const std::vector<double> y{1, 2, 3, 4};
  const std::vector<double> yh{1, 3, 2, 4};
  EXPECT_DOUBLE_EQ(mae(y, yh), 0.5);
  EXPECT_DOUBLE_EQ(rmse(y, yh), std::sqrt(0.5));
  EXPECT_DOUBLE_EQ(r_squared(y, yh), 1.0 - 2.0 / 5.0);
}

TEST(Metrics, PerfectAndMeanPredictors) {
  const std::vector<double> y{3, 7, 1, 9, 4};
  EXPECT_DOUBLE_EQ(r_squared(y, y), 1.0);
  EXPECT_DOUBLE_EQ(mae(y, y), 0.0);
  const std::vector<double> mean(y.size(), 4.8);
  EXPECT_NEAR(r_squared(y, mean), 0.0, 1e-15);
  const std::vector<double> worse{9, 1, 9, 1, 9};
  EXPECT_LT(r_squared(y, worse), 0.0);  // R2 is not clamped
}

TEST(Metrics, MatchOracleOnRandomData) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(50, 20);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = 2 + trial % 50;
    std::vector<double> y(len), yh(len);
    for (std::size_t i = 0; i < len; ++i) {
      y[i] = n(rng);
      yh[i] = y[i] + n(rng) / 4;
    }
    EXPECT_NEAR(mae(y, yh), testing::oracle_mae(y, yh), 1e-9);
    EXPECT_NEAR(rmse(y, yh), testing::oracle_rmse(y, yh), 1e-9);
    EXPECT_NEAR(r_squared(y, yh), testing::oracle_r2(y, yh), 1e-9);
    EXPECT_LE(mae(y, yh), rmse(y, yh) + 1e-12);
    EXPECT_LE(r_squared(y, yh), 1.0);
  }
}

TEST(Metrics, Errors) {
  const std::vector<double> empty;
  const std::vector<double> one{1.0};
  const std::vector<double> two{1.0, 2.0};
  const std::vector<double> flat{5.0, 5.0};
  const std::vector<double> bad{1.0, NAN};
  EXPECT_SVLLM_ERROR(mae(empty, empty), EmptyInput);
  EXPECT_SVLLM_ERROR(rmse(one, two), LengthMismatch);
  EXPECT_SVLLM_ERROR(mae(two, bad), NonFinite);
  EXPECT_SVLLM_ERROR(r_squared(one, one), TooFewValues);
  EXPECT_SVLLM_ERROR(r_squared(flat, two), ZeroVariance);
}

TEST(Tables, FourDecimalFormatting) {
  EXPECT_EQ(format_metric(0.123456), "0.1235");
  EXPECT_EQ(format_metric(1.0), "1.0000");
  EXPECT_EQ(format_metric(-0.00001), "0.0000");
  EXPECT_EQ(format_metric(-2.5), "-2.5000");
  EXPECT_EQ(format_metric(std::nullopt), "n/a");
}

TEST(Tables, RenderCsvAndText) {
  Table t{"T", {"City", "A,B"}, {{"X", "1.0000"}, {"Say \"hi\"", "n/a"}}};
  EXPECT_EQ(render_csv(t), "City,\"A,B\"\nX,1.0000\n\"Say \"\"hi\"\"\",n/a\n");
  const std::string text = render_text(t);
  EXPECT_EQ(text.substr(0, 2), "T\n");
  EXPECT_NE(text.find("1.0000"), std::string::npos);
  const auto j = render_json(t);
  EXPECT_EQ(j["rows"][0]["A,B"], "1.0000");
}

ScaleSet linear_scales(IndicatorTask task, const std::string& city) {
  std::vector<double> v(1000);
  for (int i = 0; i < 1000; ++i) v[i] = i;
  ScaleSet set;
  auto s = fit_bin_scale(v, task);
  set.add(s);
  s.city = city;
  set.add(s);
  return set;
}

TEST(EvaluateRun, BothSpacesAndPooledRows) {
  const auto scales = linear_scales(IndicatorTask::Ndvi, "Alpha");
  std::vector<PredictionRecord> preds;
  for (int i = 0; i < 50; ++i) {
    PredictionRecord p;
    p.sample_id = "s" + std::to_string(i);
    p.city = "Alpha";
    p.task = IndicatorTask::Ndvi;
    p.model = "llm";
    p.truth = i * 20.0 + 5;
    p.prediction = to_bin(scales.get(IndicatorTask::Ndvi), p.truth).value();
    preds.push_back(p);
    p.model = "knn";
    p.space = ValueSpace::Unit;
    p.prediction = p.truth + 1.0;
    preds.push_back(p);
  }
  const auto report = evaluate_run(preds, scales);
  const auto* llm_bin = report.find(kPooledCity, IndicatorTask::Ndvi, "llm", ValueSpace::Bin);
  ASSERT_NE(llm_bin, nullptr);
  EXPECT_EQ(llm_bin->n, 50u);
  EXPECT_DOUBLE_EQ(*llm_bin->r2, 1.0);
  const auto* knn_unit = report.find("Alpha", IndicatorTask::Ndvi, "knn", ValueSpace::Unit);
  ASSERT_NE(knn_unit, nullptr);
  EXPECT_NEAR(knn_unit->mae, 1.0, 1e-12);
  EXPECT_NEAR(knn_unit->rmse, 1.0, 1e-12);
  EXPECT_EQ(report.find("Beta", IndicatorTask::Ndvi, "knn", ValueSpace::Unit), nullptr);

  const std::vector<ModelColumn> cols{{"llm", "LLM"}, {"knn", "KNN"}};
  const auto t = model_comparison_table(report, cols, ValueSpace::Bin);
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.header, (std::vector<std::string>{"Task", "LLM", "KNN"}));
  EXPECT_EQ(t.rows[0][1], "1.0000");
  for (const auto& cell : t.rows[0]) {
    if (cell != t.rows[0][0]) EXPECT_EQ(cell.size() - cell.find('.'), 5u) << cell;
  }

  const std::vector<std::string> cities{"Alpha"};
  const auto pc = per_city_table(report, IndicatorTask::Ndvi, cols, cities, ValueSpace::Unit);
  EXPECT_EQ(pc.header.size(), 7u);
  EXPECT_EQ(pc.rows[0][4], "1.0000");  // KNN MAE
}

TEST(EvaluateRun, ConstantTruthWarnsInsteadOfFailing) {
  const auto scales = linear_scales(IndicatorTask::Ndvi, "Alpha");
  std::vector<PredictionRecord> preds(3);
  for (auto& p : preds) {
    p.city = "Alpha";
    p.task = IndicatorTask::Ndvi;
    p.model = "llm";
    p.truth = 10;
    p.prediction = 0.3;
  }
  const auto report = evaluate_run(preds, scales);
  EXPECT_FALSE(report.find("Alpha", IndicatorTask::Ndvi, "llm", ValueSpace::Bin)->r2);
  EXPECT_FALSE(report.warnings.empty());
}

TEST(EvaluateRun, MissingScale) {
  ScaleSet empty;
  std::vector<PredictionRecord> preds(1);
  EXPECT_SVLLM_ERROR(evaluate_run(preds, empty), MissingScale);
}

TEST(PredictionRecordJson, RoundTrip) {
  PredictionRecord p;
  p.sample_id = "s9";
  p.city = "Alpha";
  p.task = IndicatorTask::BuildingHeight;
  p.model = "llm";
  p.truth = 12.5;
  p.prediction = 4.4;
  p.preset = "no-cot";
  p.raw_answer = "4.4";
  p.prompt_hashes = {"abc"};
  p.template_version = "v1";
  const auto back = nlohmann::json(p).get<PredictionRecord>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(p));
}

TEST(Ablation, FourPresetsWithExpectedCallCounts) {
  const auto scales = linear_scales(IndicatorTask::Ndvi, "Alpha");
  std::vector<AblationSample> samples;
  TruthMap truths;
  for (int i = 0; i < 20; ++i) {
    AblationSample s{"Alpha", testing::sample_context("a" + std::to_string(i)), i * 50.0};
    truths[{s.ctx.point.id(), IndicatorTask::Ndvi}] = to_bin(scales.get(IndicatorTask::Ndvi), s.truth);
    samples.push_back(s);
  }
  ChatGateway gw({}, truths);
  AblationOptions opts;
  opts.workers = 3;
  const auto runs = run_ablations(samples, IndicatorTask::Ndvi, scales, gw, opts);
  ASSERT_EQ(runs.size(), 4u);
  for (const auto& run : runs) {
    EXPECT_TRUE(run.error.empty());
    EXPECT_EQ(run.gateway_calls, run.preset == Preset::WithoutCOT ? 20u : 40u);
    EXPECT_DOUBLE_EQ(*run.r2_by_city.at("Alpha"), 1.0);
    EXPECT_EQ(run.predictions.size(), 20u);
  }
  const std::vector<std::string> cities{"Alpha"};
  const auto t = ablation_table(runs, cities);
  EXPECT_EQ(t.header, (std::vector<std::string>{"City", "Full", "WithoutCOT", "WithoutStreetview", "WithoutTEXT"}));
  EXPECT_EQ(t.rows[0], (std::vector<std::string>{"Alpha", "1.0000", "1.0000", "1.0000", "1.0000"}));
}

TEST(Ablation, FailedPresetDoesNotStopOthers) {
  const auto scales = linear_scales(IndicatorTask::Ndvi, "Alpha");
  std::vector<AblationSample> samples{{"Alpha", testing::sample_context("a"), 1.0},
                                      {"Alpha", testing::sample_context("b"), 900.0}};
  ModelConfig cfg;
  cfg.provider = ModelProvider::MockScripted;
  // Rationale replies are ignored; answers alternate valid / invalid so only
  // the answer-only preset sees a clean run of parsable numbers.
  cfg.scripted_replies = {"x", "1.0"};
  ChatGateway gw(cfg);
  AblationOptions opts;
  opts.presets = {Preset::Full, Preset::WithoutCOT};
  const auto runs = run_ablations(samples, IndicatorTask::Ndvi, scales, gw, opts);
  ASSERT_EQ(runs.size(), 2u);
  EXPECT_TRUE(runs[0].error.empty());
  EXPECT_FALSE(runs[1].error.empty());  // "x" cannot be parsed
  const std::vector<std::string> cities{"Alpha"};
  EXPECT_EQ(ablation_table(runs, cities).rows[0][2], "n/a");
}

}  // namespace
}  // namespace svllm
