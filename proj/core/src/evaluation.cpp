#include "svllm/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <tuple>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "svllm/error.hpp"

namespace svllm {

using nlohmann::json;

namespace {

void check_inputs(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) {
    throw Error(ErrorKind::LengthMismatch,
                fmt::format("metrics: {} truths vs {} predictions", y.size(), y_hat.size()));
  }
  if (y.empty()) throw Error(ErrorKind::EmptyInput, "metrics: no observations");
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i]) || !std::isfinite(y_hat[i])) {
      throw Error(ErrorKind::NonFinite, fmt::format("metrics: non-finite value at index {}", i));
    }
  }
}

}  // namespace

double mae(std::span<const double> y, std::span<const double> y_hat) {
  check_inputs(y, y_hat);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - y_hat[i]);
  return s / static_cast<double>(y.size());
}

double rmse(std::span<const double> y, std::span<const double> y_hat) {
  check_inputs(y, y_hat);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

double r_squared(std::span<const double> y, std::span<const double> y_hat) {
  check_inputs(y, y_hat);
  if (y.size() < 2) throw Error(ErrorKind::TooFewValues, "r_squared needs at least 2 observations");
  if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); })) {
    throw Error(ErrorKind::ZeroVariance, "r_squared: ground truth is constant");
  }
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  return 1.0 - ss_res / ss_tot;
}

std::string_view to_string(ValueSpace space) noexcept {
  return space == ValueSpace::Bin ? "bin" : "unit";
}

void to_json(json& j, const PredictionRecord& v) {
  j = json{{"sample_id", v.sample_id}, {"city", v.city},   {"task", task_key(v.task)},
           {"model", v.model},         {"truth", v.truth}, {"prediction", v.prediction},
           {"space", to_string(v.space)}};
  if (!v.preset.empty()) j["preset"] = v.preset;
  if (!v.raw_answer.empty()) j["raw_answer"] = v.raw_answer;
  if (!v.rationale.empty()) j["rationale"] = v.rationale;
  if (!v.prompt_hashes.empty()) j["prompt_hashes"] = v.prompt_hashes;
  if (!v.template_version.empty()) j["template_version"] = v.template_version;
}

void from_json(const json& j, PredictionRecord& v) {
  v = PredictionRecord{};
  v.sample_id = j.at("sample_id").get<std::string>();
  v.city = j.value("city", "");
  const auto task = parse_task(j.at("task").get<std::string>());
  if (!task) throw Error(ErrorKind::SchemaError, "prediction record: unknown task");
  v.task = *task;
  v.model = j.at("model").get<std::string>();
  v.truth = j.at("truth").get<double>();
  v.prediction = j.at("prediction").get<double>();
  v.space = j.value("space", "bin") == "unit" ? ValueSpace::Unit : ValueSpace::Bin;
  v.preset = j.value("preset", "");
  v.raw_answer = j.value("raw_answer", "");
  v.rationale = j.value("rationale", "");
  v.prompt_hashes = j.value("prompt_hashes", std::vector<std::string>{});
  v.template_version = j.value("template_version", "");
}

// ---------------------------------------------------------------------------

const MetricsRow* MetricsReport::find(std::string_view city, IndicatorTask task,
                                      std::string_view model, ValueSpace space) const {
  for (const auto& r : rows) {
    if (r.city == city && r.task == task && r.model == model && r.space == space) return &r;
  }
  return nullptr;
}

namespace {

struct Group {
  std::vector<double> truth_bin, pred_bin, truth_unit, pred_unit;
};

}  // namespace

MetricsReport evaluate_run(std::span<const PredictionRecord> predictions, const ScaleSet& scales) {
  // (task, model, city); the pooled group sorts first for each (task, model).
  std::map<std::tuple<IndicatorTask, std::string, std::string>, Group> groups;
  for (const auto& p : predictions) {
    const BinScale& scale = scales.get(p.task, p.city);
    const double tb = to_bin(scale, p.truth).value();
    double pb = 0.0, pu = 0.0;
    if (p.space == ValueSpace::Bin) {
      pb = p.prediction;
      pu = from_bin(scale, BinLabel::from_value(p.prediction));
    } else {
      pu = p.prediction;
      pb = to_bin(scale, p.prediction).value();
    }
    for (const std::string& city : {std::string(kPooledCity), p.city}) {
      auto& g = groups[{p.task, p.model, city}];
      g.truth_bin.push_back(tb);
      g.pred_bin.push_back(pb);
      g.truth_unit.push_back(p.truth);
      g.pred_unit.push_back(pu);
    }
  }

  MetricsReport report;
  for (const auto& [key, g] : groups) {
    const auto& [task, model, city] = key;
    for (ValueSpace space : {ValueSpace::Bin, ValueSpace::Unit}) {
      const auto& y = space == ValueSpace::Bin ? g.truth_bin : g.truth_unit;
      const auto& yh = space == ValueSpace::Bin ? g.pred_bin : g.pred_unit;
      MetricsRow row{city, task, model, space, mae(y, yh), rmse(y, yh), std::nullopt, y.size()};
      try {
        row.r2 = r_squared(y, yh);
      } catch (const Error& e) {
        report.warnings.push_back(fmt::format("{} / {} / {} ({}): R2 undefined: {}", city,
                                              task_key(task), model, to_string(space), e.message()));
      }
      if (row.mae > row.rmse * (1.0 + 1e-12) + 1e-300) {
        throw std::logic_error("metrics invariant violated: MAE > RMSE");
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

void to_json(json& j, const MetricsReport& v) {
  json rows = json::array();
  for (const auto& r : v.rows) {
    rows.push_back({{"city", r.city},
                    {"task", task_key(r.task)},
                    {"model", r.model},
                    {"space", to_string(r.space)},
                    {"mae", r.mae},
                    {"rmse", r.rmse},
                    {"r2", r.r2 ? json(*r.r2) : json(nullptr)},
                    {"n", r.n}});
  }
  j = json{{"rows", rows}, {"warnings", v.warnings}};
}

// ---------------------------------------------------------------------------

std::string format_metric(std::optional<double> v) {
  if (!v) return "n/a";
  std::string s = fmt::format("{:.4f}", *v);
  if (s == "-0.0000") s = "0.0000";
  return s;
}

std::string render_text(const Table& t) {
  std::vector<std::size_t> width(t.header.size(), 0);
  for (std::size_t c = 0; c < t.header.size(); ++c) width[c] = t.header[c].size();
  for (const auto& row : t.rows) {
    for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) {
      width[c] = std::max(width[c], row[c].size());
    }
  }
  const auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string cell = c < cells.size() ? cells[c] : "";
      if (c == 0) {
        out += fmt::format("{:<{}}", cell, width[c]);
      } else {
        out += fmt::format("  {:>{}}", cell, width[c]);
      }
    }
    return out + "\n";
  };
  std::string out;
  if (!t.title.empty()) out += t.title + "\n";
  out += line(t.header);
  std::size_t total = 0;
  for (auto w : width) total += w + 2;
  out += std::string(total > 2 ? total - 2 : 0, '-') + "\n";
  for (const auto& row : t.rows) out += line(row);
  return out;
}

namespace {

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string csv_line(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += csv_cell(cells[i]);
  }
  return out + "\n";
}

}  // namespace

std::string render_csv(const Table& t) {
  std::string out = csv_line(t.header);
  for (const auto& row : t.rows) out += csv_line(row);
  return out;
}

json render_json(const Table& t) {
  json rows = json::array();
  for (const auto& row : t.rows) {
    json obj = json::object();
    for (std::size_t c = 0; c < row.size() && c < t.header.size(); ++c) obj[t.header[c]] = row[c];
    rows.push_back(std::move(obj));
  }
  return json{{"title", t.title}, {"columns", t.header}, {"rows", rows}};
}

Table model_comparison_table(const MetricsReport& report, std::span<const ModelColumn> models,
                             ValueSpace space, std::string_view city) {
  Table t;
  t.title = fmt::format("R2 by task and model ({}, {} space)", city, to_string(space));
  t.header.push_back("Task");
  for (const auto& m : models) t.header.push_back(m.label);
  for (IndicatorTask task : kAllTasks) {
    std::vector<std::string> row{std::string(info(task).short_name)};
    bool any = false;
    for (const auto& m : models) {
      const MetricsRow* r = report.find(city, task, m.model, space);
      any = any || r != nullptr;
      row.push_back(format_metric(r ? r->r2 : std::nullopt));
    }
    if (any) t.rows.push_back(std::move(row));
  }
  return t;
}

Table per_city_table(const MetricsReport& report, IndicatorTask task,
                     std::span<const ModelColumn> models, std::span<const std::string> cities,
                     ValueSpace space) {
  Table t;
  t.title = fmt::format("{} task: MAE / RMSE / R2 by city ({} space)", info(task).short_name,
                        to_string(space));
  t.header.push_back("City");
  for (const auto& m : models) {
    for (std::string_view metric : {"MAE", "RMSE", "R2"}) {
      t.header.push_back(fmt::format("{} {}", m.label, metric));
    }
  }
  for (const auto& city : cities) {
    std::vector<std::string> row{city};
    for (const auto& m : models) {
      const MetricsRow* r = report.find(city, task, m.model, space);
      row.push_back(format_metric(r ? std::optional<double>(r->mae) : std::nullopt));
      row.push_back(format_metric(r ? std::optional<double>(r->rmse) : std::nullopt));
      row.push_back(format_metric(r ? r->r2 : std::nullopt));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------------------

std::vector<AblationRun> run_ablations(std::span<const AblationSample> samples, IndicatorTask task,
                                       const ScaleSet& scales, ChatGateway& gateway,
                                       const AblationOptions& options) {
  std::vector<AblationRun> runs;
  for (Preset preset : options.presets) {
    AblationRun run;
    run.preset = preset;
    run.flags = preset_flags(preset);
    const std::size_t calls_before = gateway.calls();

    std::vector<std::optional<PredictionRecord>> slots(samples.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex error_mutex;
    auto work = [&] {
      for (std::size_t i = next++; i < samples.size() && !failed; i = next++) {
        const auto& s = samples[i];
        try {
          const BinScale& scale = scales.get(task, s.city);
          const auto trace = predict_sample(s.ctx, task, scale, run.flags, gateway, options.predict);
          PredictionRecord rec;
          rec.sample_id = s.ctx.point.id();
          rec.city = s.city;
          rec.task = task;
          rec.model = gateway.config().name;
          rec.truth = s.truth;
          rec.prediction = trace.bin.value();
          rec.space = ValueSpace::Bin;
          rec.preset = std::string(preset_cli_name(preset));
          rec.raw_answer = trace.raw_answer;
          rec.rationale = trace.rationale ? trace.rationale->text : "";
          rec.prompt_hashes = trace.prompt_hashes;
          rec.template_version = trace.template_version;
          slots[i] = std::move(rec);
        } catch (const std::exception& e) {
          std::lock_guard lock(error_mutex);
          if (!failed.exchange(true)) first_error = e.what();
        }
      }
    };
    {
      std::vector<std::jthread> pool;
      const std::size_t n = std::clamp<std::size_t>(options.workers, 1, std::max<std::size_t>(samples.size(), 1));
      for (std::size_t t = 1; t < n; ++t) pool.emplace_back(work);
      work();
    }
    run.gateway_calls = gateway.calls() - calls_before;
    if (failed) {
      run.error = first_error;
      runs.push_back(std::move(run));
      continue;
    }
    for (auto& slot : slots) run.predictions.push_back(std::move(*slot));

    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_city;
    for (const auto& rec : run.predictions) {
      auto& [y, yh] = by_city[rec.city];
      y.push_back(to_bin(scales.get(task, rec.city), rec.truth).value());
      yh.push_back(rec.prediction);
    }
    for (const auto& [city, pair] : by_city) {
      try {
        run.r2_by_city[city] = r_squared(pair.first, pair.second);
      } catch (const Error&) {
        run.r2_by_city[city] = std::nullopt;
      }
    }
    runs.push_back(std::move(run));
  }
  return runs;
}

Table ablation_table(std::span<const AblationRun> runs, std::span<const std::string> cities) {
  Table t;
  t.title = "R2 by city and ablation preset";
  t.header.push_back("City");
  for (const auto& run : runs) {
    t.header.emplace_back(preset_name(run.preset));
  }
  for (const auto& city : cities) {
    std::vector<std::string> row{city};
    for (const auto& run : runs) {
      const auto it = run.r2_by_city.find(city);
      row.push_back(format_metric(it == run.r2_by_city.end() ? std::nullopt : it->second));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace svllm
