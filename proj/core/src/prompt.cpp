#include "svllm/prompt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iterator>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "svllm/error.hpp"
#include "svllm/hashing.hpp"

namespace svllm {

using nlohmann::json;

AblationFlags preset_flags(Preset preset) noexcept {
  AblationFlags f;
  switch (preset) {
    case Preset::Full: break;
    case Preset::WithoutCOT: f.use_cot = false; break;
    case Preset::WithoutStreetview: f.use_streetview = false; break;
    case Preset::WithoutTEXT: f.use_text = false; break;
  }
  return f;
}

std::string_view preset_name(Preset preset) noexcept {
  switch (preset) {
    case Preset::Full: return "Full";
    case Preset::WithoutCOT: return "WithoutCOT";
    case Preset::WithoutStreetview: return "WithoutStreetview";
    case Preset::WithoutTEXT: return "WithoutTEXT";
  }
  return "Full";
}

std::string_view preset_cli_name(Preset preset) noexcept {
  switch (preset) {
    case Preset::Full: return "full";
    case Preset::WithoutCOT: return "no-cot";
    case Preset::WithoutStreetview: return "no-svi";
    case Preset::WithoutTEXT: return "no-text";
  }
  return "full";
}

std::optional<Preset> parse_preset(std::string_view text) noexcept {
  for (Preset p : kAllPresets) {
    if (text == preset_name(p) || text == preset_cli_name(p)) return p;
  }
  return std::nullopt;
}

std::string_view to_string(Stage stage) noexcept {
  return stage == Stage::Rationale ? "rationale" : "answer";
}

std::string prompt_hash(const PromptBundle& b) {
  std::string material = fmt::format("{}\n{}\n{}\n{}\n", to_string(b.stage), b.template_version,
                                     b.system_text, b.user_text);
  for (const auto& img : b.image_attachments) material += "img:" + img + "\n";
  return sha256_hex(material);
}

// ---------------------------------------------------------------------------
// Templates (v1)

namespace {

constexpr std::string_view kRationaleSystem =
    "You are a geospatial analyst. You study one location at a time using map data and, "
    "when available, a street-level photograph.";

constexpr std::string_view kAnswerSystem =
    "You are a geospatial analyst who rates locations on a fixed 0.0 to 9.9 scale.";

bool attaches_image(const GeoContext& ctx, const AblationFlags& flags) {
  return flags.use_streetview && ctx.image.available();
}

std::string render_context(const GeoContext& ctx, IndicatorTask task, const AblationFlags& flags,
                           bool image_attached) {
  const auto& ti = info(task);
  std::string out = fmt::format("Indicator: {} ({})\n", ti.long_name, ti.unit);
  out += fmt::format("Location: latitude {:.6f}, longitude {:.6f}\n", ctx.point.lat(),
                     ctx.point.lon());
  if (flags.use_text) {
    out += fmt::format("Address: {}\n", ctx.address.display_name);
    if (ctx.nearby.empty()) {
      out += "Nearby places: none found\n";
    } else {
      out += "Nearby places (closest first):\n";
      for (const auto& p : ctx.nearby) {
        out += fmt::format("- {}{}, {:.0f} m\n", p.name,
                           p.category ? fmt::format(" [{}]", *p.category) : std::string(),
                           p.distance_m);
      }
    }
  }
  if (image_attached) {
    out += fmt::format("Street view: one photograph taken {:.0f} m from the location is attached.\n",
                       ctx.image.offset_m);
  }
  return out;
}

}  // namespace

PromptBundle render_rationale_prompt(const GeoContext& ctx, IndicatorTask task,
                                     const AblationFlags& flags) {
  if (!flags.use_cot) {
    throw Error(ErrorKind::CotDisabled, "rationale stage requested with use_cot = false");
  }
  const bool image = attaches_image(ctx, flags);
  PromptBundle b;
  b.stage = Stage::Rationale;
  b.system_text = std::string(kRationaleSystem);
  b.user_text = render_context(ctx, task, flags, image);
  b.user_text += fmt::format(
      "\nWork through the evidence step by step. Name the features of this place that point to "
      "a higher or lower {} and explain the effect of each one. Do not give a final number.\n",
      info(task).metric_label);
  if (image) b.image_attachments.push_back(ctx.image.local_path);
  b.sample_id = ctx.point.id();
  b.task = task;
  b.flags = flags;
  return b;
}

PromptBundle render_answer_prompt(const GeoContext& ctx, const Rationale& rationale,
                                  IndicatorTask task, const BinScale& scale,
                                  const AblationFlags& flags, bool attach_images) {
  const auto& ti = info(task);
  const bool image = attach_images && attaches_image(ctx, flags);
  PromptBundle b;
  b.stage = Stage::Answer;
  b.system_text = std::string(kAnswerSystem);
  b.user_text = render_context(ctx, task, flags, image);
  if (flags.use_cot) {
    b.user_text += "\nAnalysis from the previous step:\n<<<\n" + rationale.text + "\n>>>\n";
  }
  b.user_text += fmt::format(
      "\nScale: 0.0 is the lowest and 9.9 the highest {} in this city ({:.4g} to {:.4g} {}). "
      "Each 0.1 step holds about one percent of locations.\n"
      "Reply with the value on the 0.0 to 9.9 scale, one decimal, as the first thing in your "
      "answer.\n",
      ti.metric_label, scale.boundaries.front(), scale.boundaries.back(), ti.unit);
  if (image) b.image_attachments.push_back(ctx.image.local_path);
  b.sample_id = ctx.point.id();
  b.task = task;
  b.flags = flags;
  return b;
}

BinLabel parse_bin_answer(std::string_view text) {
  static const std::regex kDecimal(R"(-?\d+\.\d+)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(text.begin(), text.end(), m, kDecimal)) {
    const auto preview = text.substr(0, 80);
    throw Error(ErrorKind::ParseError, fmt::format("no decimal answer in '{}'", preview));
  }
  return BinLabel::from_value(std::stod(m.str()));
}

// ---------------------------------------------------------------------------
// Gateway

std::string_view to_string(ModelProvider provider) noexcept {
  switch (provider) {
    case ModelProvider::RemoteChat: return "remote_chat";
    case ModelProvider::MockEcho: return "mock_echo";
    case ModelProvider::MockNoisy: return "mock_noisy";
    case ModelProvider::MockScripted: return "mock_scripted";
    case ModelProvider::MockHash: return "mock_hash";
  }
  return "unknown";
}

std::optional<ModelProvider> parse_model_provider(std::string_view text) noexcept {
  for (auto p : {ModelProvider::RemoteChat, ModelProvider::MockEcho, ModelProvider::MockNoisy,
                 ModelProvider::MockScripted, ModelProvider::MockHash}) {
    if (text == to_string(p)) return p;
  }
  return std::nullopt;
}

void ModelConfig::validate() const {
  if (name.empty()) throw Error(ErrorKind::ConfigError, "model name is empty");
  if (max_retries < 0) throw Error(ErrorKind::ConfigError, "max_retries must be >= 0");
  if (max_in_flight == 0) throw Error(ErrorKind::ConfigError, "max_in_flight must be >= 1");
  if (!(noise_sigma >= 0) || !(penalty_no_cot >= 0) || !(penalty_no_streetview >= 0) ||
      !(penalty_no_text >= 0)) {
    throw Error(ErrorKind::ConfigError, "noise parameters must be non-negative");
  }
  if (provider == ModelProvider::RemoteChat && (endpoint.empty() || model_id.empty())) {
    throw Error(ErrorKind::ConfigError, "remote_chat needs endpoint and model_id");
  }
}

double mock_noise_z(std::uint64_t seed, std::string_view sample_id, IndicatorTask task) {
  std::mt19937_64 rng(mix_seed(mix_seed(seed, fnv1a64(sample_id)), fnv1a64(task_key(task))));
  std::normal_distribution<double> normal(0.0, 1.0);
  return normal(rng);
}

ChatGateway::ChatGateway(ModelConfig cfg, TruthMap truths, std::shared_ptr<Transport> transport)
    : cfg_(std::move(cfg)),
      truths_(std::move(truths)),
      transport_(std::move(transport)),
      in_flight_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(cfg_.max_in_flight, 1, 1024))) {
  cfg_.validate();
  if (cfg_.provider == ModelProvider::RemoteChat && !transport_) {
    throw Error(ErrorKind::ConfigError, "remote_chat gateway needs a transport");
  }
}

void ChatGateway::set_transcript(const std::filesystem::path& path) {
  std::lock_guard lock(log_mutex_);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  transcript_.close();
  transcript_.open(path, std::ios::app);
  if (!transcript_) throw Error(ErrorKind::MissingArtifact, "cannot open " + path.string());
}

ModelResponse ChatGateway::complete(const PromptBundle& bundle) {
  ++calls_;
  ModelResponse response;
  if (cfg_.provider == ModelProvider::RemoteChat) {
    in_flight_.acquire();
    try {
      response = remote_complete(bundle);
    } catch (...) {
      in_flight_.release();
      throw;
    }
    in_flight_.release();
  } else {
    response = mock_complete(bundle);
  }
  log(bundle, response);
  return response;
}

namespace {

int word_count(std::string_view text) {
  std::istringstream in{std::string(text)};
  return static_cast<int>(std::distance(std::istream_iterator<std::string>(in),
                                        std::istream_iterator<std::string>()));
}

}  // namespace

ModelResponse ChatGateway::mock_complete(const PromptBundle& b) {
  ModelResponse r;
  r.model = std::string(to_string(cfg_.provider));
  const auto truth = [&]() -> BinLabel {
    const auto it = truths_.find({b.sample_id, b.task});
    if (it == truths_.end()) {
      throw Error(ErrorKind::GatewayError,
                  fmt::format("no oracle truth for sample {} task {}", b.sample_id, task_key(b.task)));
    }
    return it->second;
  };

  switch (cfg_.provider) {
    case ModelProvider::MockEcho:
      r.text = b.stage == Stage::Rationale
                   ? fmt::format("Recorded {} value retrieved for this location.", task_key(b.task))
                   : truth().str();
      break;
    case ModelProvider::MockNoisy:
      if (b.stage == Stage::Rationale) {
        r.text = fmt::format("Assessment of {} from the listed context.", task_key(b.task));
      } else {
        const double sigma = cfg_.noise_sigma + (b.flags.use_cot ? 0.0 : cfg_.penalty_no_cot) +
                             (b.flags.use_streetview ? 0.0 : cfg_.penalty_no_streetview) +
                             (b.flags.use_text ? 0.0 : cfg_.penalty_no_text);
        const double eps = sigma * mock_noise_z(cfg_.seed, b.sample_id, b.task);
        r.text = BinLabel::from_value(truth().value() + eps).str();
      }
      break;
    case ModelProvider::MockHash: {
      const std::string h = sha256_hex(prompt_hash(b));
      r.text = b.stage == Stage::Rationale
                   ? "Hashed rationale " + h.substr(0, 12) + "."
                   : BinLabel::from_index(static_cast<int>(std::stoull(h.substr(0, 8), nullptr, 16) % kBinCount)).str();
      break;
    }
    case ModelProvider::MockScripted:
      if (cfg_.scripted_replies.empty()) {
        throw Error(ErrorKind::GatewayError, "mock_scripted has no replies configured");
      }
      r.text = cfg_.scripted_replies[script_pos_++ % cfg_.scripted_replies.size()];
      break;
    case ModelProvider::RemoteChat:
      break;
  }
  r.prompt_tokens = word_count(b.system_text) + word_count(b.user_text);
  r.completion_tokens = word_count(r.text);
  return r;
}

std::string ChatGateway::remote_request_body(const PromptBundle& b) const {
  json content = json::array();
  content.push_back({{"type", "text"}, {"text", b.user_text}});
  for (const auto& img : b.image_attachments) {
    const std::string bytes = read_file(cfg_.image_root / img);
    content.push_back({{"type", "image_url"},
                       {"image_url", {{"url", "data:image/jpeg;base64," + base64_encode(bytes)}}}});
  }
  const json body = {
      {"model", cfg_.model_id},
      {"temperature", cfg_.temperature},
      {"max_tokens", cfg_.max_tokens},
      {"messages",
       json::array({{{"role", "system"}, {"content", b.system_text}},
                    {{"role", "user"}, {"content", content}}})},
  };
  return body.dump();
}

ModelResponse ChatGateway::remote_complete(const PromptBundle& b) {
  HttpRequest req;
  req.provider = Provider::Chat;
  req.method = "POST";
  req.url = cfg_.endpoint + "/chat/completions";
  req.body = remote_request_body(b);
  req.headers = {{"Content-Type", "application/json"}};
  if (!cfg_.api_key.empty()) req.headers.emplace_back("Authorization", "Bearer " + cfg_.api_key);

  const auto start = std::chrono::steady_clock::now();
  HttpResponse last;
  int attempt = 0;
  for (attempt = 1; attempt <= cfg_.max_retries + 1; ++attempt) {
    last = transport_->send(req);
    if (last.ok() || !last.retryable()) break;
    if (attempt <= cfg_.max_retries && cfg_.backoff_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.backoff_ms) * (1 << (attempt - 1)));
    }
  }
  if (!last.ok()) {
    if (last.timed_out) {
      throw Error(ErrorKind::TimeoutError, fmt::format("chat request timed out after {} attempts",
                                                       std::min(attempt, cfg_.max_retries + 1)));
    }
    throw Error(ErrorKind::GatewayError,
                last.status == 0 ? fmt::format("chat transport failure: {}", last.error)
                                 : fmt::format("chat endpoint returned HTTP {}", last.status));
  }

  ModelResponse r;
  r.attempts = std::min(attempt, cfg_.max_retries + 1);
  r.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  try {
    const auto doc = json::parse(last.body);
    const auto& content = doc.at("choices").at(0).at("message").at("content");
    if (content.is_string()) {
      r.text = content.get<std::string>();
    } else {
      for (const auto& part : content) {
        if (part.value("type", "") == "text") r.text += part.value("text", "");
      }
    }
    r.model = doc.value("model", cfg_.model_id);
    if (doc.contains("usage")) {
      r.prompt_tokens = doc.at("usage").value("prompt_tokens", 0);
      r.completion_tokens = doc.at("usage").value("completion_tokens", 0);
    } else {
      r.completion_tokens = word_count(r.text);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::GatewayError, fmt::format("malformed chat response: {}", e.what()));
  }
  return r;
}

void ChatGateway::log(const PromptBundle& b, const ModelResponse& r) {
  std::lock_guard lock(log_mutex_);
  if (!transcript_.is_open()) return;
  json line = b;
  line["prompt_hash"] = prompt_hash(b);
  line["response"] = {{"text", r.text},
                      {"model", r.model},
                      {"prompt_tokens", r.prompt_tokens},
                      {"completion_tokens", r.completion_tokens},
                      {"attempts", r.attempts},
                      {"latency_ms", r.latency_ms}};
  transcript_ << line.dump() << '\n';
  transcript_.flush();
}

// ---------------------------------------------------------------------------

PredictionTrace predict_sample(const GeoContext& ctx, IndicatorTask task, const BinScale& scale,
                               const AblationFlags& flags, ChatGateway& gateway,
                               const PredictOptions& options) {
  PredictionTrace t;
  t.sample_id = ctx.point.id();
  t.task = task;
  t.flags = flags;
  try {
    Rationale rationale;
    if (flags.use_cot) {
      const auto bundle = render_rationale_prompt(ctx, task, flags);
      t.prompt_hashes.push_back(prompt_hash(bundle));
      const auto r = gateway.complete(bundle);
      ++t.gateway_calls;
      rationale = Rationale{r.text, r.completion_tokens, r.model, r.latency_ms};
      t.rationale = rationale;
    }
    const auto bundle =
        render_answer_prompt(ctx, rationale, task, scale, flags, options.answer_images);
    t.prompt_hashes.push_back(prompt_hash(bundle));
    const auto r = gateway.complete(bundle);
    ++t.gateway_calls;
    t.raw_answer = r.text;
    t.bin = parse_bin_answer(r.text);
  } catch (const Error& e) {
    throw Error(e.kind(), fmt::format("sample {} ({}): {}", t.sample_id, task_key(task), e.message()));
  }
  return t;
}

void to_json(json& j, const AblationFlags& v) {
  j = json{{"use_cot", v.use_cot}, {"use_streetview", v.use_streetview}, {"use_text", v.use_text}};
}

void from_json(const json& j, AblationFlags& v) {
  v.use_cot = j.value("use_cot", true);
  v.use_streetview = j.value("use_streetview", true);
  v.use_text = j.value("use_text", true);
}

void to_json(json& j, const PromptBundle& v) {
  j = json{{"sample_id", v.sample_id},
           {"task", task_key(v.task)},
           {"stage", to_string(v.stage)},
           {"template_version", v.template_version},
           {"flags", v.flags},
           {"system_text", v.system_text},
           {"user_text", v.user_text},
           {"image_attachments", v.image_attachments}};
}

}  // namespace svllm
