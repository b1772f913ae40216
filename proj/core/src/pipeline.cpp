#include "svllm/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/core.h>

#include "svllm/baselines.hpp"
#include "svllm/bias.hpp"
#include "svllm/dataset.hpp"
#include "svllm/error.hpp"
#include "svllm/hashing.hpp"
#include "svllm/prompt.hpp"
#include "svllm/retrieval.hpp"
#include "svllm/sampler.hpp"
#include "svllm/synth.hpp"

namespace svllm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kContextsSchema = "svllm.contexts";
constexpr std::string_view kPredictionsSchema = "svllm.predictions";

void say(const StageOptions& o, const std::string& msg) {
  if (o.log) o.log(msg);
}

std::string file_digest(const fs::path& p) {
  std::error_code ec;
  if (!fs::exists(p, ec)) return "absent";
  return sha256_hex(read_file(p));
}

json pick(const json& full, std::initializer_list<const char*> keys) {
  json out = json::object();
  for (const char* k : keys) out[k] = full.at(k);
  return out;
}

json retrieval_subset(const json& full) {
  json r = full.at("retrieval");
  for (const char* k : {"mode", "rate_limits", "max_attempts", "backoff_ms", "timeout_s"}) r.erase(k);
  return r;
}

std::string stage_hash(std::string_view stage, const json& subset, std::initializer_list<fs::path> inputs) {
  std::string text = std::string(stage) + "\n" + subset.dump() + "\n";
  for (const auto& p : inputs) text += p.filename().string() + "=" + file_digest(p) + "\n";
  return sha256_hex(text);
}

std::string rel(const RunPaths& paths, const fs::path& p) {
  const auto r = p.lexically_normal().lexically_relative(paths.root.lexically_normal());
  if (r.empty() || *r.begin() == "..") return p.lexically_normal().string();
  return r.string();
}

fs::path resolve_output(const RunPaths& paths, const std::string& out) {
  const fs::path p(out);
  return p.is_absolute() ? p : paths.root / p;
}

std::optional<StageResult> check_skip(const RunPaths& paths, const std::string& stage,
                                      const std::string& hash, const StageOptions& options) {
  if (options.force) return std::nullopt;
  const auto m = read_manifest(paths, stage);
  if (!m || m->stage_hash != hash) return std::nullopt;
  std::error_code ec;
  for (const auto& out : m->outputs) {
    if (!fs::exists(resolve_output(paths, out), ec)) return std::nullopt;
  }
  StageResult r;
  r.stage = stage;
  r.skipped = true;
  r.counts = m->counts;
  r.outputs = m->outputs;
  r.warnings = m->warnings;
  say(options, fmt::format("{}: up to date, skipped", stage));
  return r;
}

void finish(const RunPaths& paths, const PipelineConfig& cfg, const std::string& hash,
            const StageResult& result) {
  Manifest m;
  m.stage = result.stage;
  m.stage_hash = hash;
  m.config_hash = config_hash(cfg);
  m.seed = cfg.seed;
  m.template_version = std::string(kTemplateVersion);
  m.counts = result.counts;
  m.outputs = result.outputs;
  m.warnings = result.warnings;
  m.finished_at = utc_timestamp();
  write_file_atomic(paths.manifest(result.stage), json(m).dump(2) + "\n");
}

void require(const fs::path& p, std::string_view producer) {
  std::error_code ec;
  if (!fs::exists(p, ec)) {
    throw Error(ErrorKind::MissingArtifact,
                fmt::format("missing {} (run `svllm {}` first)", p.string(), producer));
  }
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  const std::size_t threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  std::vector<std::jthread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
}

ScaleSet load_scales(const RunPaths& paths) {
  require(paths.scales(), "sample");
  try {
    return json::parse(read_file(paths.scales())).get<ScaleSet>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaError, fmt::format("{}: {}", paths.scales().string(), e.what()));
  }
}

std::map<std::string, GeoContext> load_contexts(const fs::path& path) {
  std::map<std::string, GeoContext> out;
  for (const auto& line : read_jsonl(path)) {
    if (line.contains("schema")) continue;
    out.emplace(line.at("id").get<std::string>(), line.at("context").get<GeoContext>());
  }
  return out;
}

std::set<std::string> load_exclusions(const fs::path& path) {
  std::set<std::string> out;
  std::error_code ec;
  if (!fs::exists(path, ec)) return out;
  for (const auto& line : read_jsonl(path)) out.insert(line.at("id").get<std::string>());
  return out;
}

// Test-split samples with a context that were not excluded, in dataset order.
struct Eligible {
  Dataset dataset;
  std::map<std::string, GeoContext> contexts;
  std::vector<std::size_t> index;
};

Eligible load_eligible(const RunPaths& paths) {
  require(paths.dataset(), "sample");
  require(paths.contexts(), "retrieve");
  Eligible e;
  e.dataset = read_dataset(paths.dataset());
  e.contexts = load_contexts(paths.contexts());
  const auto excluded = load_exclusions(paths.exclusions());
  for (std::size_t i = 0; i < e.dataset.records.size(); ++i) {
    const auto& r = e.dataset.records[i];
    if (r.split != SplitTag::Test || excluded.count(r.id) || !e.contexts.count(r.id)) continue;
    e.index.push_back(i);
  }
  if (e.index.empty()) {
    throw Error(ErrorKind::EmptyInput, "no eligible test samples (retrieve incomplete or all excluded)");
  }
  return e;
}

TruthMap truth_map(const Dataset& ds) {
  TruthMap m;
  for (const auto& r : ds.records) {
    for (const auto& [task, bin] : r.bins) m[{r.id, task}] = bin;
  }
  return m;
}

json prediction_header(const std::string& hash, const std::string& model) {
  return {{"schema", kPredictionsSchema}, {"stage_hash", hash}, {"model", model}};
}

void write_predictions(const fs::path& path, const std::string& hash, const std::string& model,
                       std::span<const PredictionRecord> records) {
  std::vector<json> lines{prediction_header(hash, model)};
  for (const auto& r : records) lines.emplace_back(r);
  write_jsonl(path, lines);
}

std::shared_ptr<Transport> chat_transport(const PipelineConfig& cfg, const StageOptions& options) {
  if (cfg.model.provider != ModelProvider::RemoteChat) return nullptr;
  return make_provider_transport(cfg.retrieval, options.live);
}

std::string model_label(const std::string& model, const PipelineConfig& cfg) {
  if (model == "knn") return "KNN";
  if (model == "gbrt") return "GBRT";
  if (model == "llm" && cfg.model.name == "llm") return "LLM";
  return model;
}

void write_table(const fs::path& stem, const Table& t, bool with_json, std::vector<std::string>& outputs,
                 const RunPaths& paths) {
  write_file_atomic(fs::path(stem.string() + ".txt"), render_text(t));
  write_file_atomic(fs::path(stem.string() + ".csv"), render_csv(t));
  outputs.push_back(rel(paths, stem.string() + ".txt"));
  outputs.push_back(rel(paths, stem.string() + ".csv"));
  if (with_json) {
    write_file_atomic(fs::path(stem.string() + ".json"), render_json(t).dump(2) + "\n");
    outputs.push_back(rel(paths, stem.string() + ".json"));
  }
}

[[noreturn]] void throw_batch_failure(std::size_t failed, std::size_t total, ErrorKind kind,
                                      const std::string& first) {
  throw Error(kind, fmt::format("{} of {} items failed; first: {}", failed, total, first));
}

}  // namespace

RunPaths run_paths(const PipelineConfig& cfg) { return RunPaths{cfg.workdir}; }

std::string prediction_tag(const std::string& model, Preset preset) {
  if (preset == Preset::Full) return model;
  return fmt::format("{}-{}", model, preset_cli_name(preset));
}

void to_json(json& j, const Manifest& m) {
  j = json{{"stage", m.stage},
           {"stage_hash", m.stage_hash},
           {"config_hash", m.config_hash},
           {"seed", m.seed},
           {"template_version", m.template_version},
           {"counts", m.counts},
           {"outputs", m.outputs},
           {"warnings", m.warnings},
           {"finished_at", m.finished_at}};
}

void from_json(const json& j, Manifest& m) {
  m.stage = j.at("stage").get<std::string>();
  m.stage_hash = j.at("stage_hash").get<std::string>();
  m.config_hash = j.value("config_hash", "");
  m.seed = j.value("seed", std::uint64_t{0});
  m.template_version = j.value("template_version", "");
  m.counts = j.value("counts", json::object());
  m.outputs = j.value("outputs", std::vector<std::string>{});
  m.warnings = j.value("warnings", std::vector<std::string>{});
  m.finished_at = j.value("finished_at", "");
}

std::optional<Manifest> read_manifest(const RunPaths& paths, const std::string& stage) {
  const auto p = paths.manifest(stage);
  std::error_code ec;
  if (!fs::exists(p, ec)) return std::nullopt;
  try {
    return json::parse(read_file(p)).get<Manifest>();
  } catch (const json::exception&) {
    return std::nullopt;  // unreadable manifest: recompute
  }
}

std::vector<PredictionRecord> read_predictions(const fs::path& path) {
  std::vector<PredictionRecord> out;
  for (const auto& line : read_jsonl(path)) {
    if (line.contains("schema")) continue;
    out.push_back(line.get<PredictionRecord>());
  }
  return out;
}

// ---------------------------------------------------------------------------

StageResult cmd_synth(const PipelineConfig& cfg, const StageOptions& options) {
  const RunPaths paths = run_paths(cfg);
  const json full = config_to_json(cfg);
  json subset = pick(full, {"city", "tasks", "seed", "synth"});
  subset["retrieval"] = retrieval_subset(full);
  subset["bias_radius_m"] = cfg.bias.radius_m;
  const std::string hash = stage_hash("synth", subset, {});
  if (auto r = check_skip(paths, "synth", hash, options)) return *r;

  say(options, fmt::format("synth: generating {} points", cfg.synth.n_points));
  const SynthCity city = generate_synth_city(cfg);

  std::vector<json> truth_lines, poi_lines;
  for (const auto& tp : city.points) truth_lines.emplace_back(tp);
  for (const auto& p : city.pois) poi_lines.emplace_back(p);
  write_jsonl(paths.synth_truth(), truth_lines);
  write_jsonl(paths.synth_pois(), poi_lines);

  const auto stats = write_synth_fixtures(city, cfg, FixtureStore(cfg.retrieval.fixture_dir));

  StageResult r;
  r.stage = "synth";
  r.counts = {{"points", city.points.size()},
              {"pois", city.pois.size()},
              {"fixtures", stats.fixtures},
              {"svi_direct", stats.direct},
              {"svi_resampled", stats.resampled},
              {"svi_missing", stats.missing}};
  r.outputs = {rel(paths, paths.synth_truth()), rel(paths, paths.synth_pois()),
               rel(paths, cfg.retrieval.fixture_dir)};
  finish(paths, cfg, hash, r);
  say(options, fmt::format("synth: {} points, {} POIs, {} fixtures", city.points.size(),
                           city.pois.size(), stats.fixtures));
  return r;
}

StageResult cmd_sample(const PipelineConfig& cfg, const StageOptions& options) {
  const RunPaths paths = run_paths(cfg);
  const fs::path input = cfg.points_file.empty() ? paths.synth_truth() : cfg.points_file;
  require(input, "synth");
  const json full = config_to_json(cfg);
  const std::string hash =
      stage_hash("sample", pick(full, {"city", "tasks", "seed", "split", "binning"}), {input});
  if (auto r = check_skip(paths, "sample", hash, options)) return *r;

  std::vector<TruthPoint> points;
  {
    std::size_t line = 0;
    for (const auto& j : read_jsonl(input)) {
      ++line;
      try {
        points.push_back(j.get<TruthPoint>());
      } catch (const json::exception& e) {
        throw Error(ErrorKind::SchemaError, fmt::format("{}:{}: {}", input.string(), line, e.what()));
      }
      for (IndicatorTask t : cfg.tasks) {
        if (!points.back().truths.count(t)) {
          throw Error(ErrorKind::SchemaError, fmt::format("{}: point {} has no truth for {}",
                                                          input.string(), points.back().point.id(),
                                                          task_key(t)));
        }
      }
    }
  }
  if (points.empty()) throw Error(ErrorKind::EmptyInput, input.string() + " has no points");

  std::vector<GeoPoint> geo;
  std::map<std::string, const TruthPoint*> by_id;
  for (const auto& p : points) {
    geo.push_back(p.point);
    by_id[p.point.id()] = &p;
  }
  say(options, fmt::format("sample: ordering {} points", geo.size()));
  const SampleOrder order = farthest_first_order(geo);
  const DatasetSplit split = split_dataset(order.ids, cfg.split);
  std::map<std::string, SplitTag> tag;
  for (const auto& id : split.train) tag[id] = SplitTag::Train;
  for (const auto& id : split.val) tag[id] = SplitTag::Val;
  for (const auto& id : split.test) tag[id] = SplitTag::Test;

  ScaleSet scales;
  for (IndicatorTask t : cfg.tasks) {
    std::vector<double> values;
    values.reserve(points.size());
    for (const auto& p : points) values.push_back(p.truths.at(t));
    BinScale s = fit_bin_scale(values, t, cfg.binning);
    s.city = cfg.city.name;
    scales.add(std::move(s));
  }

  Dataset ds;
  ds.header = {{"city", cfg.city.name}, {"n", points.size()}, {"seed", cfg.seed}, {"stage_hash", hash}};
  for (std::size_t i = 0; i < order.ids.size(); ++i) {
    const TruthPoint& tp = *by_id.at(order.ids[i]);
    DatasetRecord rec;
    rec.id = tp.point.id();
    rec.point = tp.point;
    rec.city = cfg.city.name;
    rec.split = tag.at(rec.id);
    rec.order = i;
    rec.min_distance_m = order.min_distance_m[i];
    for (IndicatorTask t : cfg.tasks) {
      rec.truths[t] = tp.truths.at(t);
      rec.bins[t] = to_bin(scales.get(t, cfg.city.name), rec.truths[t]);
    }
    ds.records.push_back(std::move(rec));
  }
  write_dataset(paths.dataset(), ds);
  write_file_atomic(paths.scales(), json(scales).dump(1) + "\n");

  StageResult r;
  r.stage = "sample";
  r.counts = {{"points", points.size()},
              {"train", split.train.size()},
              {"val", split.val.size()},
              {"test", split.test.size()}};
  r.outputs = {rel(paths, paths.dataset()), rel(paths, paths.scales())};
  finish(paths, cfg, hash, r);
  say(options, fmt::format("sample: train {} / val {} / test {}", split.train.size(), split.val.size(),
                           split.test.size()));
  return r;
}

StageResult cmd_retrieve(const PipelineConfig& cfg, const StageOptions& options) {
  const RunPaths paths = run_paths(cfg);
  require(paths.dataset(), "sample");
  const json full = config_to_json(cfg);
  json subset = pick(full, {"seed", "keep_missing_images"});
  subset["retrieval"] = retrieval_subset(full);
  const std::string hash = stage_hash("retrieve", subset, {paths.dataset()});
  if (auto r = check_skip(paths, "retrieve", hash, options)) return *r;

  const Dataset ds = read_dataset(paths.dataset());
  std::vector<GeoPoint> wanted;
  for (const auto& rec : ds.records) {
    if (rec.split == SplitTag::Test) wanted.push_back(rec.point);
  }

  // Resume from a partial contexts file written under the same stage hash.
  std::map<std::string, GeoContext> done;
  std::error_code ec;
  bool resumed = false;
  if (!options.force && fs::exists(paths.contexts(), ec)) {
    const auto lines = read_jsonl(paths.contexts());
    if (!lines.empty() && lines.front().value("stage_hash", "") == hash) {
      done = load_contexts(paths.contexts());
      resumed = true;
    }
  }
  if (!resumed) {
    const std::vector<json> header{{{"schema", kContextsSchema}, {"stage_hash", hash}}};
    write_jsonl(paths.contexts(), header);
  }

  std::vector<GeoPoint> todo;
  for (const auto& p : wanted) {
    if (!done.count(p.id())) todo.push_back(p);
  }
  say(options, fmt::format("retrieve: {} samples, {} already done", wanted.size(), wanted.size() - todo.size()));

  auto transport = make_provider_transport(cfg.retrieval, options.live);
  GeoRetriever retriever(cfg.retrieval, transport);

  std::size_t failed = 0;
  std::string first_error;
  std::optional<ErrorKind> first_kind;
  const std::size_t batch = std::max<std::size_t>(32, cfg.workers * 8);
  for (std::size_t start = 0; start < todo.size(); start += batch) {
    const std::size_t end = std::min(todo.size(), start + batch);
    const auto outcomes = build_geo_contexts(
        retriever, std::span<const GeoPoint>(todo).subspan(start, end - start), cfg.workers);
    std::vector<json> lines;
    for (const auto& o : outcomes) {
      if (o.context) {
        lines.push_back({{"id", o.id}, {"context", *o.context}});
        done.emplace(o.id, *o.context);
      } else {
        ++failed;
        if (first_error.empty()) {
          first_error = o.error;
          first_kind = o.error_kind;
        }
      }
    }
    append_jsonl(paths.contexts(), lines);
    say(options, fmt::format("retrieve: {}/{}", end, todo.size()));
  }

  std::vector<json> exclusions;
  std::size_t with_image = 0;
  for (const auto& p : wanted) {
    const auto it = done.find(p.id());
    if (it == done.end()) continue;
    if (it->second.image.available()) {
      ++with_image;
    } else if (!cfg.keep_missing_images) {
      exclusions.push_back({{"id", p.id()}, {"reason", "no_streetview"}});
    }
  }
  write_jsonl(paths.exclusions(), exclusions);

  StageResult r;
  r.stage = "retrieve";
  r.provider_requests = retriever.requests_sent();
  r.upstream_calls = transport->upstream_calls();
  r.counts = {{"samples", wanted.size()},
              {"contexts", done.size()},
              {"with_image", with_image},
              {"excluded", exclusions.size()},
              {"failed", failed},
              {"provider_requests", r.provider_requests},
              {"upstream_calls", r.upstream_calls}};
  r.outputs = {rel(paths, paths.contexts()), rel(paths, paths.exclusions())};
  if (failed > 0) {
    throw_batch_failure(failed, todo.size(), first_kind.value_or(ErrorKind::ProviderError), first_error);
  }
  finish(paths, cfg, hash, r);
  say(options, fmt::format("retrieve: {} contexts, {} excluded, {} provider requests", done.size(),
                           exclusions.size(), r.provider_requests));
  return r;
}

StageResult cmd_predict(const PipelineConfig& cfg, const StageOptions& options) {
  const RunPaths paths = run_paths(cfg);
  require(paths.dataset(), "sample");
  require(paths.contexts(), "retrieve");
  const std::string tag = prediction_tag(cfg.model.name, cfg.preset);
  const std::string stage = "predict." + tag;
  const json full = config_to_json(cfg);
  const std::string hash =
      stage_hash(stage, pick(full, {"seed", "tasks", "model", "preset", "answer_images"}),
                 {paths.dataset(), paths.scales(), paths.contexts(), paths.exclusions()});
  if (auto r = check_skip(paths, stage, hash, options)) return *r;

  const Eligible el = load_eligible(paths);
  const ScaleSet scales = load_scales(paths);
  const fs::path out = paths.predictions_dir() / (tag + ".jsonl");

  std::set<std::pair<std::string, IndicatorTask>> done;
  std::error_code ec;
  bool resumed = false;
  if (!options.force && fs::exists(out, ec)) {
    const auto lines = read_jsonl(out);
    if (!lines.empty() && lines.front().value("stage_hash", "") == hash) {
      for (const auto& rec : read_predictions(out)) done.insert({rec.sample_id, rec.task});
      resumed = true;
    }
  }
  if (!resumed) write_predictions(out, hash, tag, {});

  struct Item {
    std::size_t record;
    IndicatorTask task;
  };
  std::vector<Item> todo;
  std::size_t total = 0;
  for (std::size_t idx : el.index) {
    for (IndicatorTask t : cfg.tasks) {
      ++total;
      if (!done.count({el.dataset.records[idx].id, t})) todo.push_back({idx, t});
    }
  }
  say(options, fmt::format("predict[{}]: {} items, {} already done", tag, total, total - todo.size()));

  ChatGateway gateway(cfg.model, truth_map(el.dataset), chat_transport(cfg, options));
  gateway.set_transcript(paths.transcripts_dir() / (tag + ".jsonl"));
  const AblationFlags flags = preset_flags(cfg.preset);
  const PredictOptions popts{cfg.answer_images};

  std::size_t failed = 0;
  std::string first_error;
  ErrorKind first_kind = ErrorKind::GatewayError;
  std::mutex mu;
  const std::size_t batch = std::max<std::size_t>(32, cfg.workers * 8);
  for (std::size_t start = 0; start < todo.size(); start += batch) {
    const std::size_t end = std::min(todo.size(), start + batch);
    std::vector<std::optional<PredictionRecord>> slots(end - start);
    parallel_for(end - start, cfg.workers, [&](std::size_t i) {
      const Item& item = todo[start + i];
      const DatasetRecord& rec = el.dataset.records[item.record];
      try {
        const auto trace = predict_sample(el.contexts.at(rec.id), item.task,
                                          scales.get(item.task, rec.city), flags, gateway, popts);
        PredictionRecord p;
        p.sample_id = rec.id;
        p.city = rec.city;
        p.task = item.task;
        p.model = tag;
        p.truth = rec.truths.at(item.task);
        p.prediction = trace.bin.value();
        p.space = ValueSpace::Bin;
        p.preset = std::string(preset_cli_name(cfg.preset));
        p.raw_answer = trace.raw_answer;
        p.rationale = trace.rationale ? trace.rationale->text : "";
        p.prompt_hashes = trace.prompt_hashes;
        p.template_version = trace.template_version;
        slots[i] = std::move(p);
      } catch (const Error& e) {
        std::lock_guard lock(mu);
        if (failed++ == 0) {
          first_error = e.message();
          first_kind = e.kind();
        }
      }
    });
    std::vector<json> lines;
    for (auto& s : slots) {
      if (s) lines.emplace_back(*s);
    }
    append_jsonl(out, lines);
    say(options, fmt::format("predict[{}]: {}/{}", tag, end, todo.size()));
  }

  StageResult r;
  r.stage = stage;
  r.counts = {{"samples", el.index.size()},
              {"predictions", total - failed},
              {"failed", failed},
              {"gateway_calls", gateway.calls()}};
  r.outputs = {rel(paths, out), rel(paths, paths.transcripts_dir() / (tag + ".jsonl"))};
  if (failed > 0) throw_batch_failure(failed, todo.size(), first_kind, first_error);
  finish(paths, cfg, hash, r);
  say(options, fmt::format("predict[{}]: {} predictions, {} gateway calls", tag, total, gateway.calls()));
  return r;
}

StageResult cmd_baseline(const PipelineConfig& cfg, const StageOptions& options,
                         const std::optional<ExternalImport>& external) {
  const RunPaths paths = run_paths(cfg);
  require(paths.dataset(), "sample");
  require(paths.contexts(), "retrieve");
  const json full = config_to_json(cfg);
  json subset = pick(full, {"tasks", "baselines"});
  fs::path ext_csv;
  if (external) {
    ext_csv = external->csv;
    subset["external"] = {{"name", external->name}, {"space", to_string(external->space)}};
  }
  const std::string hash = stage_hash("baseline", subset,
                                      {paths.dataset(), paths.contexts(), paths.exclusions(), ext_csv});
  if (auto r = check_skip(paths, "baseline", hash, options)) return *r;

  const Eligible el = load_eligible(paths);
  const auto& records = el.dataset.records;
  const bool raw = cfg.baselines.raw_units;
  const ValueSpace space = raw ? ValueSpace::Unit : ValueSpace::Bin;

  std::vector<PredictionRecord> knn_out, gbrt_out;
  StageResult r;
  r.stage = "baseline";
  for (IndicatorTask task : cfg.tasks) {
    std::vector<LabeledPoint> train;
    std::vector<std::vector<double>> features;
    std::vector<double> targets;
    for (const auto& rec : records) {
      if (rec.split != SplitTag::Train) continue;
      const double y = raw ? rec.truths.at(task) : rec.bins.at(task).value();
      train.push_back({rec.point, y});
      features.push_back(coordinate_features(rec.point));
      targets.push_back(y);
    }
    const GbrtModel model = gbrt_fit(features, targets, cfg.baselines.gbrt);
    const fs::path model_path = paths.models_dir() / fmt::format("gbrt_{}.json", task_key(task));
    write_file_atomic(model_path, json(model).dump(1) + "\n");
    r.outputs.push_back(rel(paths, model_path));

    for (std::size_t idx : el.index) {
      const auto& rec = records[idx];
      PredictionRecord p;
      p.sample_id = rec.id;
      p.city = rec.city;
      p.task = task;
      p.truth = rec.truths.at(task);
      p.space = space;
      p.model = "knn";
      p.prediction = knn_predict(train, rec.point, cfg.baselines.knn);
      knn_out.push_back(p);
      p.model = "gbrt";
      p.prediction = gbrt_predict(model, coordinate_features(rec.point));
      gbrt_out.push_back(p);
    }
  }
  const fs::path knn_path = paths.predictions_dir() / "knn.jsonl";
  const fs::path gbrt_path = paths.predictions_dir() / "gbrt.jsonl";
  write_predictions(knn_path, hash, "knn", knn_out);
  write_predictions(gbrt_path, hash, "gbrt", gbrt_out);
  r.outputs.push_back(rel(paths, knn_path));
  r.outputs.push_back(rel(paths, gbrt_path));
  const auto n_train = std::count_if(records.begin(), records.end(),
                                     [](const DatasetRecord& d) { return d.split == SplitTag::Train; });
  r.counts = {{"train", n_train}, {"test", el.index.size()}, {"tasks", cfg.tasks.size()}};

  if (external) {
    std::set<std::string> known;
    std::map<std::string, std::size_t> pos;
    for (std::size_t idx : el.index) {
      known.insert(records[idx].id);
      pos[records[idx].id] = idx;
    }
    std::vector<PredictionRecord> ext_out;
    for (const auto& e : import_external_predictions(external->csv, known)) {
      const auto& rec = records[pos.at(e.sample_id)];
      if (!rec.truths.count(e.task)) {
        throw Error(ErrorKind::SchemaError,
                    fmt::format("{} row {}: task {} is not configured", external->csv.string(), e.row,
                                task_key(e.task)));
      }
      PredictionRecord p;
      p.sample_id = e.sample_id;
      p.city = rec.city;
      p.task = e.task;
      p.model = external->name;
      p.truth = rec.truths.at(e.task);
      p.prediction = e.prediction;
      p.space = external->space;
      ext_out.push_back(std::move(p));
    }
    const fs::path ext_path = paths.predictions_dir() / (external->name + ".jsonl");
    write_predictions(ext_path, hash, external->name, ext_out);
    r.outputs.push_back(rel(paths, ext_path));
    r.counts["external"] = ext_out.size();
  }
  finish(paths, cfg, hash, r);
  say(options, fmt::format("baseline: knn and gbrt on {} test samples", el.index.size()));
  return r;
}

StageResult cmd_evaluate(const PipelineConfig& cfg, const StageOptions& options) {
  const RunPaths paths = run_paths(cfg);
  const fs::path dir = paths.predictions_dir();
  std::vector<fs::path> files;
  std::error_code ec;
  if (fs::is_directory(dir, ec)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw Error(ErrorKind::MissingArtifact,
                fmt::format("no prediction files in {} (run `svllm predict` or `svllm baseline` first)",
                            dir.string()));
  }

  std::string digest;
  for (const auto& f : files) digest += f.filename().string() + "=" + file_digest(f) + "\n";
  json subset = pick(config_to_json(cfg), {"tasks"});
  subset["model_name"] = cfg.model.name;
  subset["predictions"] = sha256_hex(digest);
  const std::string hash = stage_hash("evaluate", subset, {paths.scales()});
  if (auto r = check_skip(paths, "evaluate", hash, options)) return *r;

  const ScaleSet scales = load_scales(paths);
  std::vector<PredictionRecord> all;
  std::set<std::string> models, cities;
  for (const auto& f : files) {
    for (auto& rec : read_predictions(f)) {
      models.insert(rec.model);
      cities.insert(rec.city);
      all.push_back(std::move(rec));
    }
  }
  const MetricsReport report = evaluate_run(all, scales);

  // Configured model first, then KNN, GBRT and anything else by name.
  std::vector<ModelColumn> columns;
  const auto add_model = [&](const std::string& m) {
    if (models.count(m) &&
        std::none_of(columns.begin(), columns.end(), [&](const ModelColumn& c) { return c.model == m; })) {
      columns.push_back({m, model_label(m, cfg)});
    }
  };
  add_model(cfg.model.name);
  add_model("knn");
  add_model("gbrt");
  for (const auto& m : models) add_model(m);

  StageResult r;
  r.stage = "evaluate";
  const fs::path res = paths.results_dir();
  write_file_atomic(res / "metrics.json", json(report).dump(2) + "\n");
  r.outputs.push_back(rel(paths, res / "metrics.json"));

  Table long_form{"metrics", {"city", "task", "model", "space", "mae", "rmse", "r2", "n"}, {}};
  for (const auto& row : report.rows) {
    long_form.rows.push_back({row.city, std::string(task_key(row.task)), row.model,
                              std::string(to_string(row.space)), format_metric(row.mae),
                              format_metric(row.rmse), format_metric(row.r2), std::to_string(row.n)});
  }
  write_file_atomic(res / "metrics.csv", render_csv(long_form));
  r.outputs.push_back(rel(paths, res / "metrics.csv"));

  std::vector<std::string> city_rows(cities.begin(), cities.end());
  if (city_rows.size() > 1) city_rows.emplace_back(kPooledCity);
  for (ValueSpace space : {ValueSpace::Bin, ValueSpace::Unit}) {
    const std::string sp(to_string(space));
    Table t2 = model_comparison_table(report, columns, space);
    t2.title = fmt::format("R2 by task and model ({} space)", sp);
    write_table(res / ("table2_" + sp), t2, true, r.outputs, paths);
    for (IndicatorTask task : cfg.tasks) {
      Table a1 = per_city_table(report, task, columns, city_rows, space);
      a1.title = fmt::format("{} by city ({} space)", info(task).short_name, sp);
      write_table(res / fmt::format("tableA1_{}_{}", task_key(task), sp), a1, false, r.outputs, paths);
    }
  }
  r.warnings = report.warnings;
  r.counts = {{"predictions", all.size()}, {"models", models.size()}, {"rows", report.rows.size()}};
  finish(paths, cfg, hash, r);
  say(options, fmt::format("evaluate: {} predictions across {} models", all.size(), models.size()));
  return r;
}

StageResult cmd_ablate(const PipelineConfig& cfg, const StageOptions& options) {
  const RunPaths paths = run_paths(cfg);
  require(paths.dataset(), "sample");
  require(paths.contexts(), "retrieve");
  const IndicatorTask task = cfg.evaluation.ablation_task;
  if (std::find(cfg.tasks.begin(), cfg.tasks.end(), task) == cfg.tasks.end()) {
    throw Error(ErrorKind::ConfigError,
                fmt::format("ablation task {} is not among the configured tasks", task_key(task)));
  }
  const json full = config_to_json(cfg);
  const std::string hash =
      stage_hash("ablate", pick(full, {"seed", "model", "answer_images", "evaluation"}),
                 {paths.dataset(), paths.scales(), paths.contexts(), paths.exclusions()});
  if (auto r = check_skip(paths, "ablate", hash, options)) return *r;

  const Eligible el = load_eligible(paths);
  const ScaleSet scales = load_scales(paths);
  std::vector<AblationSample> samples;
  std::set<std::string> city_set;
  for (std::size_t idx : el.index) {
    const auto& rec = el.dataset.records[idx];
    samples.push_back({rec.city, el.contexts.at(rec.id), rec.truths.at(task)});
    city_set.insert(rec.city);
  }
  const TruthMap truths = truth_map(el.dataset);
  AblationOptions aopts;
  aopts.workers = cfg.workers;
  aopts.predict.answer_images = cfg.answer_images;

  std::vector<AblationRun> runs;
  if (cfg.evaluation.parallel_presets) {
    // One gateway per preset so call counts stay separate.
    std::vector<std::vector<AblationRun>> per(kAllPresets.size());
    {
      std::vector<std::jthread> pool;
      for (std::size_t i = 0; i < kAllPresets.size(); ++i) {
        pool.emplace_back([&, i] {
          ChatGateway gw(cfg.model, truths, chat_transport(cfg, options));
          gw.set_transcript(paths.transcripts_dir() /
                            fmt::format("ablation-{}.jsonl", preset_cli_name(kAllPresets[i])));
          AblationOptions o = aopts;
          o.presets = {kAllPresets[i]};
          per[i] = run_ablations(samples, task, scales, gw, o);
        });
      }
    }
    for (auto& v : per) std::move(v.begin(), v.end(), std::back_inserter(runs));
  } else {
    ChatGateway gw(cfg.model, truths, chat_transport(cfg, options));
    gw.set_transcript(paths.transcripts_dir() / "ablation.jsonl");
    say(options, fmt::format("ablate: {} samples x {} presets", samples.size(), kAllPresets.size()));
    runs = run_ablations(samples, task, scales, gw, aopts);
  }

  StageResult r;
  r.stage = "ablate";
  const std::vector<std::string> cities(city_set.begin(), city_set.end());
  const Table t3 = ablation_table(runs, cities);
  write_table(paths.results_dir() / "table3", t3, true, r.outputs, paths);

  Table long_form{"ablation",
                  {"city", "preset", "use_cot", "use_streetview", "use_text", "r2", "gateway_calls", "n"},
                  {}};
  std::string failures;
  json calls = json::object();
  for (const auto& run : runs) {
    const std::string cli(preset_cli_name(run.preset));
    calls[cli] = run.gateway_calls;
    if (!run.error.empty()) {
      failures += fmt::format("{}: {}; ", cli, run.error);
      r.warnings.push_back(fmt::format("preset {} failed: {}", cli, run.error));
    } else {
      const fs::path p = paths.ablation_dir() / (cli + ".jsonl");
      write_predictions(p, hash, cfg.model.name, run.predictions);
      r.outputs.push_back(rel(paths, p));
    }
    for (const auto& city : cities) {
      const auto it = run.r2_by_city.find(city);
      const std::optional<double> r2 = it == run.r2_by_city.end() ? std::nullopt : it->second;
      const auto n = std::count_if(run.predictions.begin(), run.predictions.end(),
                                   [&](const PredictionRecord& p) { return p.city == city; });
      long_form.rows.push_back({city, cli, run.flags.use_cot ? "1" : "0",
                                run.flags.use_streetview ? "1" : "0", run.flags.use_text ? "1" : "0",
                                format_metric(r2), std::to_string(run.gateway_calls), std::to_string(n)});
    }
  }
  write_file_atomic(paths.results_dir() / "ablation_long.csv", render_csv(long_form));
  r.outputs.push_back(rel(paths, paths.results_dir() / "ablation_long.csv"));
  r.counts = {{"samples", samples.size()}, {"presets", runs.size()}, {"gateway_calls", calls}};
  if (!failures.empty()) throw Error(ErrorKind::GatewayError, "ablation presets failed: " + failures);
  finish(paths, cfg, hash, r);
  say(options, fmt::format("ablate: {} presets over {} samples", runs.size(), samples.size()));
  return r;
}

StageResult cmd_bias(const PipelineConfig& cfg, const StageOptions& options) {
  const RunPaths paths = run_paths(cfg);
  require(paths.dataset(), "sample");
  const fs::path preds = paths.predictions_dir() / (cfg.bias.model + ".jsonl");
  require(preds, "predict");
  const json full = config_to_json(cfg);
  json subset = pick(full, {"bias"});
  subset["retrieval"] = retrieval_subset(full);
  const std::string hash = stage_hash("bias", subset, {paths.dataset(), paths.scales(), preds});
  if (auto r = check_skip(paths, "bias", hash, options)) return *r;

  const Dataset ds = read_dataset(paths.dataset());
  const ScaleSet scales = load_scales(paths);
  const auto predictions = read_predictions(preds);
  const PoiTaxonomy taxonomy =
      cfg.bias.taxonomy.empty() ? PoiTaxonomy::defaults() : PoiTaxonomy::load(cfg.bias.taxonomy);

  std::vector<std::string> ids;
  for (const auto& p : predictions) {
    if (std::find(ids.begin(), ids.end(), p.sample_id) == ids.end()) ids.push_back(p.sample_id);
  }
  auto transport = make_provider_transport(cfg.retrieval, options.live);
  GeoRetriever retriever(cfg.retrieval, transport);
  std::vector<PoiCounts> counts(ids.size());
  std::vector<std::string> errors(ids.size());
  std::vector<std::optional<ErrorKind>> kinds(ids.size());
  say(options, fmt::format("bias: counting POIs around {} samples", ids.size()));
  parallel_for(ids.size(), cfg.workers, [&](std::size_t i) {
    const DatasetRecord* rec = ds.find(ids[i]);
    if (!rec) {
      errors[i] = "unknown sample " + ids[i];
      kinds[i] = ErrorKind::UnknownSampleId;
      return;
    }
    try {
      counts[i] = poi_counts(retriever, rec->point, cfg.bias.radius_m, taxonomy);
    } catch (const Error& e) {
      errors[i] = e.message();
      kinds[i] = e.kind();
    }
  });
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!errors[i].empty()) {
      const auto n = std::count_if(errors.begin(), errors.end(), [](const auto& e) { return !e.empty(); });
      throw_batch_failure(static_cast<std::size_t>(n), ids.size(), *kinds[i], errors[i]);
    }
  }
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < ids.size(); ++i) pos[ids[i]] = i;

  std::vector<BiasRecord> records;
  std::vector<json> record_lines;
  for (const auto& p : predictions) {
    const BinScale& scale = scales.get(p.task, p.city);
    const double truth_bin = to_bin(scale, p.truth).value();
    const double pred_bin = p.space == ValueSpace::Bin ? p.prediction : to_bin(scale, p.prediction).value();
    BiasRecord b{p.sample_id, p.city, p.task, pred_bin - truth_bin, counts[pos.at(p.sample_id)]};
    json c = json::object();
    for (PoiCategory cat : kAllPoiCategories) c[std::string(category_key(cat))] = count_of(b.counts, cat);
    record_lines.push_back({{"sample_id", b.sample_id},
                            {"city", b.city},
                            {"task", task_key(b.task)},
                            {"bias", b.bias},
                            {"counts", c}});
    records.push_back(std::move(b));
  }
  const BiasTable table = bias_correlation_table(records, cfg.bias.top_n);

  StageResult r;
  r.stage = "bias";
  const fs::path res = paths.results_dir();
  const Table pos_t = bias_section_table(table.positive, "Top positive correlations");
  const Table neg_t = bias_section_table(table.negative, "Top negative correlations");
  write_file_atomic(res / "bias_positive.csv", render_csv(pos_t));
  write_file_atomic(res / "bias_negative.csv", render_csv(neg_t));
  write_file_atomic(res / "bias_table.txt", render_text(pos_t) + "\n" + render_text(neg_t));
  write_file_atomic(res / "bias_matrix.csv", render_csv(bias_matrix_table(table)));
  write_jsonl(res / "bias_records.jsonl", record_lines);
  for (const char* f : {"bias_positive.csv", "bias_negative.csv", "bias_table.txt", "bias_matrix.csv",
                        "bias_records.jsonl"}) {
    r.outputs.push_back(rel(paths, res / f));
  }
  r.warnings = table.notes;
  r.provider_requests = retriever.requests_sent();
  r.upstream_calls = transport->upstream_calls();
  r.counts = {{"records", records.size()},
              {"samples", ids.size()},
              {"cells", table.cells.size()},
              {"provider_requests", r.provider_requests}};
  finish(paths, cfg, hash, r);
  say(options, fmt::format("bias: {} cells over {} records", table.cells.size(), records.size()));
  return r;
}

std::vector<StageResult> cmd_run(const PipelineConfig& cfg, const StageOptions& options) {
  std::vector<StageResult> out;
  if (cfg.points_file.empty()) out.push_back(cmd_synth(cfg, options));
  out.push_back(cmd_sample(cfg, options));
  out.push_back(cmd_retrieve(cfg, options));
  out.push_back(cmd_predict(cfg, options));
  out.push_back(cmd_baseline(cfg, options));
  out.push_back(cmd_evaluate(cfg, options));
  out.push_back(cmd_ablate(cfg, options));
  out.push_back(cmd_bias(cfg, options));
  return out;
}

}  // namespace svllm
