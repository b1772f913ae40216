#include "svllm/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "svllm/bias.hpp"
#include "svllm/error.hpp"
#include "svllm/hashing.hpp"
#include "svllm/http.hpp"

namespace svllm {

namespace fs = std::filesystem;
using nlohmann::json;

double SynthFunction::evaluate(const BBox& bbox, const GeoPoint& p) const {
  const double u = (p.lon() - bbox.min_lon) / (bbox.max_lon - bbox.min_lon);
  const double v = (p.lat() - bbox.min_lat) / (bbox.max_lat - bbox.min_lat);
  if (kind == "gaussian_bump") {
    const GeoPoint center(bbox.min_lat + center_v * (bbox.max_lat - bbox.min_lat),
                          bbox.min_lon + center_u * (bbox.max_lon - bbox.min_lon));
    const double d = haversine_distance(center, p);
    return offset + amplitude * std::exp(-d * d / (2.0 * sigma_m * sigma_m));
  }
  if (kind == "linear_gradient") {
    const double a = angle_deg * M_PI / 180.0;
    return offset + amplitude * (std::cos(a) * u + std::sin(a) * v);
  }
  if (kind == "checkerboard") {
    const int cu = std::min(cells - 1, static_cast<int>(std::floor(u * cells)));
    const int cv = std::min(cells - 1, static_cast<int>(std::floor(v * cells)));
    return offset + amplitude * ((cu + cv) % 2);
  }
  throw Error(ErrorKind::InvalidSpec, "unknown synth function '" + kind + "'");
}

void SynthConfig::validate(const BBox& bbox) const {
  bbox.validate();
  if (n_points < 100) {
    throw Error(ErrorKind::InvalidSpec, fmt::format("synth n_points must be >= 100, got {}", n_points));
  }
  for (const auto& [task, f] : functions) {
    if (f.kind != "gaussian_bump" && f.kind != "linear_gradient" && f.kind != "checkerboard") {
      throw Error(ErrorKind::InvalidSpec,
                  fmt::format("synth function for {}: unknown kind '{}'", task_key(task), f.kind));
    }
    if (f.kind == "gaussian_bump" && !(f.sigma_m > 0)) {
      throw Error(ErrorKind::InvalidSpec, "gaussian_bump sigma_m must be positive");
    }
    if (f.kind == "checkerboard" && f.cells < 1) {
      throw Error(ErrorKind::InvalidSpec, "checkerboard cells must be >= 1");
    }
    if (!(f.noise >= 0) || !std::isfinite(f.amplitude) || !std::isfinite(f.offset)) {
      throw Error(ErrorKind::InvalidSpec, "synth function parameters must be finite, noise >= 0");
    }
  }
  for (double x : poi_intensity) {
    if (!(x >= 0) || !std::isfinite(x)) throw Error(ErrorKind::InvalidSpec, "poi_intensity must be >= 0");
  }
  if (!(svi_resample_rate >= 0) || !(svi_missing_rate >= 0) ||
      svi_resample_rate + svi_missing_rate > 1.0) {
    throw Error(ErrorKind::InvalidSpec, "svi rates must be >= 0 and sum to at most 1");
  }
}

namespace {

SynthFunction default_function(IndicatorTask task) {
  SynthFunction f;
  switch (task) {
    case IndicatorTask::PopulationDensity:
      f.center_u = 0.45, f.center_v = 0.55, f.sigma_m = 3000, f.amplitude = 25000, f.offset = 800;
      break;
    case IndicatorTask::HealthcareAccess:
      f.center_u = 0.7, f.center_v = 0.3, f.sigma_m = 4000, f.amplitude = 40, f.offset = 5;
      break;
    case IndicatorTask::Ndvi:
      f.center_u = 0.2, f.center_v = 0.8, f.sigma_m = 3500, f.amplitude = 0.7, f.offset = 0.05;
      break;
    case IndicatorTask::BuildingHeight:
      f.center_u = 0.5, f.center_v = 0.5, f.sigma_m = 2500, f.amplitude = 60, f.offset = 4;
      break;
    case IndicatorTask::ImperviousSurface:
      f.center_u = 0.55, f.center_v = 0.45, f.sigma_m = 3500, f.amplitude = 0.8, f.offset = 0.1;
      break;
  }
  return f;
}

// Small typed reader that rejects unknown keys, so typos fail loudly.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail("expected an object");
  }
  ~Reader() = default;

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(fmt::format("{}: {}", key, e.what()));
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }
  const json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) fail(fmt::format("unknown key '{}'", k));
    }
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorKind::ConfigError, fmt::format("config {}: {}", where_, msg));
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

IndicatorTask task_or_fail(const std::string& text, const std::string& where) {
  const auto t = parse_task(text);
  if (!t) throw Error(ErrorKind::ConfigError, fmt::format("config {}: unknown task '{}'", where, text));
  return *t;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

}  // namespace

void PipelineConfig::finalize() {
  split.seed = mix_seed(seed, fnv1a64("split"));
  retrieval.seed = mix_seed(seed, fnv1a64("retrieval"));
  model.seed = mix_seed(seed, fnv1a64("model"));
  retrieval.workers = workers;
  if (retrieval.cache_dir.empty() || retrieval.cache_dir == "cache") retrieval.cache_dir = workdir / "cache";
  if (retrieval.fixture_dir.empty() || retrieval.fixture_dir == "fixtures") {
    retrieval.fixture_dir = workdir / "fixtures";
  }
  if (model.image_root.empty()) model.image_root = retrieval.cache_dir;
  for (IndicatorTask t : kAllTasks) {
    if (!synth.functions.count(t)) synth.functions[t] = default_function(t);
  }
}

void PipelineConfig::validate() const {
  if (city.name.empty()) throw Error(ErrorKind::ConfigError, "city name is empty");
  try {
    city.bbox.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::ConfigError, "city bbox: " + e.message());
  }
  if (tasks.empty()) throw Error(ErrorKind::ConfigError, "no tasks configured");
  if (workers == 0) throw Error(ErrorKind::ConfigError, "workers must be >= 1");
  split.validate();
  retrieval.validate();
  model.validate();
  baselines.gbrt.validate();
  if (baselines.knn.k == 0) throw Error(ErrorKind::ConfigError, "knn k must be >= 1");
  if (!(bias.radius_m > 0)) throw Error(ErrorKind::ConfigError, "bias radius must be positive");
}

PipelineConfig config_from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig cfg;
  Reader root(j, "root");

  if (root.has("city")) {
    Reader c(root.at("city"), "city");
    c.get("name", cfg.city.name);
    if (c.has("bbox")) {
      Reader b(c.at("bbox"), "city.bbox");
      b.get("min_lat", cfg.city.bbox.min_lat);
      b.get("max_lat", cfg.city.bbox.max_lat);
      b.get("min_lon", cfg.city.bbox.min_lon);
      b.get("max_lon", cfg.city.bbox.max_lon);
      b.finish();
    }
    c.finish();
  }
  if (root.has("tasks")) {
    std::vector<std::string> names;
    root.get("tasks", names);
    cfg.tasks.clear();
    for (const auto& n : names) {
      const auto t = task_or_fail(n, "tasks");
      if (std::find(cfg.tasks.begin(), cfg.tasks.end(), t) == cfg.tasks.end()) cfg.tasks.push_back(t);
    }
  }
  root.get("seed", cfg.seed);
  std::string workdir = "run", points_file;
  root.get("workdir", workdir);
  root.get("points_file", points_file);
  cfg.workdir = resolve(base_dir, workdir);
  cfg.points_file = resolve(base_dir, points_file);
  root.get("workers", cfg.workers);

  if (root.has("retrieval")) {
    auto& r = cfg.retrieval;
    Reader rr(root.at("retrieval"), "retrieval");
    rr.get("places_radius_m", r.places_radius_m);
    rr.get("places_limit", r.places_limit);
    rr.get("places_overfetch", r.places_overfetch);
    std::string tag;
    rr.get("places_tag", tag);
    if (!tag.empty()) r.places_tag = tag;
    rr.get("svi_radius_m", r.svi_radius_m);
    rr.get("resample_probes", r.resample_probes);
    rr.get("image_width", r.image_width);
    rr.get("image_height", r.image_height);
    rr.get("heading", r.heading);
    std::string mode;
    rr.get("mode", mode);
    if (!mode.empty()) {
      const auto m = parse_provider_mode(mode);
      if (!m) rr.fail("mode must be live, replay or record");
      r.mode = *m;
    }
    std::string cache, fixtures;
    rr.get("cache_dir", cache);
    rr.get("fixture_dir", fixtures);
    if (!cache.empty()) r.cache_dir = resolve(base_dir, cache);
    if (!fixtures.empty()) r.fixture_dir = resolve(base_dir, fixtures);
    rr.get("max_attempts", r.max_attempts);
    rr.get("backoff_ms", r.backoff_ms);
    rr.get("timeout_s", r.timeout_s);
    if (rr.has("endpoints")) {
      Reader e(rr.at("endpoints"), "retrieval.endpoints");
      e.get("nominatim", r.endpoints.nominatim);
      e.get("overpass", r.endpoints.overpass);
      e.get("streetview", r.endpoints.streetview);
      e.finish();
    }
    if (rr.has("rate_limits")) {
      Reader l(rr.at("rate_limits"), "retrieval.rate_limits");
      l.get("geocode_rps", r.rate_limits.geocode_rps);
      l.get("places_rps", r.rate_limits.places_rps);
      l.get("imagery_rps", r.rate_limits.imagery_rps);
      l.finish();
    }
    rr.finish();
  }

  if (root.has("split")) {
    Reader s(root.at("split"), "split");
    s.get("train", cfg.split.train_frac);
    s.get("val", cfg.split.val_frac);
    s.get("test", cfg.split.test_frac);
    s.finish();
  }
  if (root.has("binning")) {
    Reader b(root.at("binning"), "binning");
    b.get("min_values", cfg.binning.min_values);
    b.finish();
  }

  if (root.has("model")) {
    auto& m = cfg.model;
    Reader mr(root.at("model"), "model");
    std::string provider;
    mr.get("provider", provider);
    if (!provider.empty()) {
      const auto p = parse_model_provider(provider);
      if (!p) mr.fail("unknown provider '" + provider + "'");
      m.provider = *p;
    }
    mr.get("name", m.name);
    mr.get("endpoint", m.endpoint);
    mr.get("model_id", m.model_id);
    mr.get("temperature", m.temperature);
    mr.get("max_tokens", m.max_tokens);
    mr.get("max_retries", m.max_retries);
    mr.get("backoff_ms", m.backoff_ms);
    mr.get("timeout_s", m.timeout_s);
    mr.get("noise_sigma", m.noise_sigma);
    if (mr.has("penalties")) {
      Reader p(mr.at("penalties"), "model.penalties");
      p.get("no_cot", m.penalty_no_cot);
      p.get("no_streetview", m.penalty_no_streetview);
      p.get("no_text", m.penalty_no_text);
      p.finish();
    }
    mr.get("scripted_replies", m.scripted_replies);
    mr.get("max_in_flight", m.max_in_flight);
    if (mr.has("api_key")) mr.fail("api keys are read from SVLLM_CHAT_API_KEY, not the config file");
    mr.finish();
  }
  if (root.has("preset")) {
    std::string preset;
    root.get("preset", preset);
    const auto p = parse_preset(preset);
    if (!p) root.fail("unknown preset '" + preset + "'");
    cfg.preset = *p;
  }
  root.get("answer_images", cfg.answer_images);
  root.get("keep_missing_images", cfg.keep_missing_images);

  if (root.has("synth")) {
    Reader s(root.at("synth"), "synth");
    s.get("n_points", cfg.synth.n_points);
    if (s.has("functions")) {
      const json& fns = s.at("functions");
      if (!fns.is_object()) s.fail("functions must be an object keyed by task");
      for (const auto& [name, body] : fns.items()) {
        const IndicatorTask task = task_or_fail(name, "synth.functions");
        SynthFunction f = default_function(task);
        Reader fr(body, "synth.functions." + name);
        fr.get("kind", f.kind);
        fr.get("center_u", f.center_u);
        fr.get("center_v", f.center_v);
        fr.get("sigma_m", f.sigma_m);
        fr.get("angle_deg", f.angle_deg);
        fr.get("cells", f.cells);
        fr.get("amplitude", f.amplitude);
        fr.get("offset", f.offset);
        fr.get("noise", f.noise);
        fr.finish();
        cfg.synth.functions[task] = f;
      }
    }
    if (s.has("poi_intensity")) {
      Reader p(s.at("poi_intensity"), "synth.poi_intensity");
      for (std::size_t i = 0; i + 1 < kPoiCategoryCount; ++i) {
        const std::string key(category_key(kAllPoiCategories[i]));
        p.get(key.c_str(), cfg.synth.poi_intensity[i]);
      }
      p.finish();
    }
    s.get("svi_resample_rate", cfg.synth.svi_resample_rate);
    s.get("svi_missing_rate", cfg.synth.svi_missing_rate);
    s.finish();
  }

  if (root.has("baselines")) {
    Reader b(root.at("baselines"), "baselines");
    if (b.has("knn")) {
      Reader k(b.at("knn"), "baselines.knn");
      k.get("k", cfg.baselines.knn.k);
      k.finish();
    }
    if (b.has("gbrt")) {
      Reader g(b.at("gbrt"), "baselines.gbrt");
      g.get("rounds", cfg.baselines.gbrt.rounds);
      g.get("max_depth", cfg.baselines.gbrt.max_depth);
      g.get("learning_rate", cfg.baselines.gbrt.learning_rate);
      g.get("min_samples_leaf", cfg.baselines.gbrt.min_samples_leaf);
      g.finish();
    }
    b.get("raw_units", cfg.baselines.raw_units);
    b.finish();
  }
  if (root.has("evaluation")) {
    Reader e(root.at("evaluation"), "evaluation");
    std::string task;
    e.get("ablation_task", task);
    if (!task.empty()) cfg.evaluation.ablation_task = task_or_fail(task, "evaluation.ablation_task");
    e.get("parallel_presets", cfg.evaluation.parallel_presets);
    e.finish();
  }
  if (root.has("bias")) {
    Reader b(root.at("bias"), "bias");
    b.get("radius_m", cfg.bias.radius_m);
    std::string taxonomy;
    b.get("taxonomy", taxonomy);
    cfg.bias.taxonomy = resolve(base_dir, taxonomy);
    b.get("model", cfg.bias.model);
    b.get("top_n", cfg.bias.top_n);
    b.finish();
  }
  root.finish();

  cfg.finalize();
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::ConfigError, e.message());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigError, fmt::format("{}: {}", path.string(), e.what()));
  }
  return config_from_json(j, fs::absolute(path).parent_path());
}

json config_to_json(const PipelineConfig& cfg) {
  json tasks = json::array();
  for (auto t : cfg.tasks) tasks.push_back(task_key(t));
  json functions = json::object();
  for (const auto& [task, f] : cfg.synth.functions) {
    functions[std::string(task_key(task))] = {
        {"kind", f.kind},           {"center_u", f.center_u},   {"center_v", f.center_v},
        {"sigma_m", f.sigma_m},     {"angle_deg", f.angle_deg}, {"cells", f.cells},
        {"amplitude", f.amplitude}, {"offset", f.offset},       {"noise", f.noise}};
  }
  json intensity = json::object();
  for (std::size_t i = 0; i + 1 < kPoiCategoryCount; ++i) {
    intensity[std::string(category_key(kAllPoiCategories[i]))] = cfg.synth.poi_intensity[i];
  }
  const auto& r = cfg.retrieval;
  const auto& m = cfg.model;
  return json{
      {"city",
       {{"name", cfg.city.name},
        {"bbox",
         {{"min_lat", cfg.city.bbox.min_lat},
          {"max_lat", cfg.city.bbox.max_lat},
          {"min_lon", cfg.city.bbox.min_lon},
          {"max_lon", cfg.city.bbox.max_lon}}}}},
      {"tasks", tasks},
      {"seed", cfg.seed},
      {"workdir", cfg.workdir.string()},
      {"points_file", cfg.points_file.string()},
      {"workers", cfg.workers},
      {"retrieval",
       {{"places_radius_m", r.places_radius_m},
        {"places_limit", r.places_limit},
        {"places_overfetch", r.places_overfetch},
        {"places_tag", r.places_tag.value_or("")},
        {"svi_radius_m", r.svi_radius_m},
        {"resample_probes", r.resample_probes},
        {"image_width", r.image_width},
        {"image_height", r.image_height},
        {"heading", r.heading},
        {"mode", to_string(r.mode)},
        {"cache_dir", r.cache_dir.string()},
        {"fixture_dir", r.fixture_dir.string()},
        {"max_attempts", r.max_attempts},
        {"backoff_ms", r.backoff_ms},
        {"timeout_s", r.timeout_s},
        {"endpoints",
         {{"nominatim", r.endpoints.nominatim},
          {"overpass", r.endpoints.overpass},
          {"streetview", r.endpoints.streetview}}},
        {"rate_limits",
         {{"geocode_rps", r.rate_limits.geocode_rps},
          {"places_rps", r.rate_limits.places_rps},
          {"imagery_rps", r.rate_limits.imagery_rps}}}}},
      {"split",
       {{"train", cfg.split.train_frac}, {"val", cfg.split.val_frac}, {"test", cfg.split.test_frac}}},
      {"binning", {{"min_values", cfg.binning.min_values}}},
      {"model",
       {{"provider", to_string(m.provider)},
        {"name", m.name},
        {"endpoint", m.endpoint},
        {"model_id", m.model_id},
        {"temperature", m.temperature},
        {"max_tokens", m.max_tokens},
        {"max_retries", m.max_retries},
        {"backoff_ms", m.backoff_ms},
        {"timeout_s", m.timeout_s},
        {"noise_sigma", m.noise_sigma},
        {"penalties",
         {{"no_cot", m.penalty_no_cot},
          {"no_streetview", m.penalty_no_streetview},
          {"no_text", m.penalty_no_text}}},
        {"scripted_replies", m.scripted_replies},
        {"max_in_flight", m.max_in_flight}}},
      {"preset", preset_cli_name(cfg.preset)},
      {"answer_images", cfg.answer_images},
      {"keep_missing_images", cfg.keep_missing_images},
      {"synth",
       {{"n_points", cfg.synth.n_points},
        {"functions", functions},
        {"poi_intensity", intensity},
        {"svi_resample_rate", cfg.synth.svi_resample_rate},
        {"svi_missing_rate", cfg.synth.svi_missing_rate}}},
      {"baselines",
       {{"knn", {{"k", cfg.baselines.knn.k}}},
        {"gbrt",
         {{"rounds", cfg.baselines.gbrt.rounds},
          {"max_depth", cfg.baselines.gbrt.max_depth},
          {"learning_rate", cfg.baselines.gbrt.learning_rate},
          {"min_samples_leaf", cfg.baselines.gbrt.min_samples_leaf}}},
        {"raw_units", cfg.baselines.raw_units}}},
      {"evaluation",
       {{"ablation_task", task_key(cfg.evaluation.ablation_task)},
        {"parallel_presets", cfg.evaluation.parallel_presets}}},
      {"bias",
       {{"radius_m", cfg.bias.radius_m},
        {"taxonomy", cfg.bias.taxonomy.string()},
        {"model", cfg.bias.model},
        {"top_n", cfg.bias.top_n}}},
  };
}

std::string config_hash(const PipelineConfig& cfg) { return sha256_hex(config_to_json(cfg).dump()); }

void apply_env_credentials(PipelineConfig& cfg) {
  if (const char* k = std::getenv("SVLLM_STREETVIEW_KEY")) cfg.retrieval.streetview_key = k;
  if (const char* k = std::getenv("SVLLM_CHAT_API_KEY")) cfg.model.api_key = k;
}

}  // namespace svllm
