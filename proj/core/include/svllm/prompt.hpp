#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "svllm/binning.hpp"
#include "svllm/http.hpp"
#include "svllm/indicator.hpp"
#include "svllm/retrieval.hpp"

namespace svllm {

inline constexpr std::string_view kTemplateVersion = "v1";

struct AblationFlags {
  bool use_cot = true;
  bool use_streetview = true;
  bool use_text = true;

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

enum class Preset { Full, WithoutCOT, WithoutStreetview, WithoutTEXT };

inline constexpr std::array<Preset, 4> kAllPresets = {Preset::Full, Preset::WithoutCOT,
                                                      Preset::WithoutStreetview, Preset::WithoutTEXT};

AblationFlags preset_flags(Preset preset) noexcept;
/// Table header name: "Full", "WithoutCOT", ...
std::string_view preset_name(Preset preset) noexcept;
/// Command-line name: "full", "no-cot", "no-svi", "no-text".
std::string_view preset_cli_name(Preset preset) noexcept;
/// Accepts either naming.
std::optional<Preset> parse_preset(std::string_view text) noexcept;

enum class Stage { Rationale, Answer };

std::string_view to_string(Stage stage) noexcept;

struct PromptBundle {
  std::string system_text;
  std::string user_text;
  std::vector<std::string> image_attachments;  // paths relative to the image root
  Stage stage = Stage::Rationale;
  std::string template_version{kTemplateVersion};
  // Routing metadata. Never rendered into the text.
  std::string sample_id;
  IndicatorTask task = IndicatorTask::PopulationDensity;
  AblationFlags flags;
};

/// sha256 over everything the model sees: stage, version, texts, attachments.
std::string prompt_hash(const PromptBundle& bundle);

/// Stage 1. Throws CotDisabled when flags.use_cot is false.
PromptBundle render_rationale_prompt(const GeoContext& ctx, IndicatorTask task,
                                     const AblationFlags& flags);

struct Rationale {
  std::string text;
  int token_count = 0;
  std::string model;
  double latency_ms = 0.0;
};

/// Stage 2. The rationale is embedded verbatim only when flags.use_cot.
/// `attach_images` = false drops the photograph from this stage only.
PromptBundle render_answer_prompt(const GeoContext& ctx, const Rationale& rationale,
                                  IndicatorTask task, const BinScale& scale,
                                  const AblationFlags& flags, bool attach_images = true);

/// First decimal number in the text, rounded to one decimal and clamped to
/// [0.0, 9.9]. Throws ParseError when the text holds no decimal number.
BinLabel parse_bin_answer(std::string_view text);

// ---------------------------------------------------------------------------
// Gateway

enum class ModelProvider { RemoteChat, MockEcho, MockNoisy, MockScripted, MockHash };

std::string_view to_string(ModelProvider provider) noexcept;
std::optional<ModelProvider> parse_model_provider(std::string_view text) noexcept;

struct ModelConfig {
  ModelProvider provider = ModelProvider::MockEcho;
  std::string name = "llm";  // label used for prediction files and reports

  // RemoteChat (OpenAI-style chat-completions).
  std::string endpoint;       // base URL; "/chat/completions" is appended
  std::string model_id;
  std::string api_key;        // from SVLLM_CHAT_API_KEY; never persisted
  double temperature = 0.0;
  int max_tokens = 512;
  int max_retries = 3;
  int backoff_ms = 500;
  double timeout_s = 60.0;
  std::filesystem::path image_root;  // resolves PromptBundle::image_attachments

  // MockNoisy: epsilon = sigma_eff * z with z ~ N(0, 1) seeded per (seed, sample, task).
  // Each disabled ablation flag adds its penalty to sigma.
  double noise_sigma = 0.5;
  double penalty_no_cot = 0.0;
  double penalty_no_streetview = 0.0;
  double penalty_no_text = 0.0;
  std::uint64_t seed = 0;

  // MockScripted: replies consumed in order, cycling.
  std::vector<std::string> scripted_replies;

  std::size_t max_in_flight = 4;

  void validate() const;
};

struct ModelResponse {
  std::string text;
  std::string model;
  int prompt_tokens = 0;
  int completion_tokens = 0;
  double latency_ms = 0.0;
  int attempts = 1;
};

/// (sample id, task) -> true bin; the oracle behind MockEcho and MockNoisy.
using TruthMap = std::map<std::pair<std::string, IndicatorTask>, BinLabel>;

/// Standard normal draw used by MockNoisy for one (seed, sample, task).
double mock_noise_z(std::uint64_t seed, std::string_view sample_id, IndicatorTask task);

/// Chat-completion gateway. Mocks are pure functions of (bundle, config);
/// RemoteChat goes through `transport` with retries and a global in-flight cap.
class ChatGateway {
 public:
  ChatGateway(ModelConfig cfg, TruthMap truths = {}, std::shared_ptr<Transport> transport = nullptr);

  /// Throws GatewayError after retries are exhausted, TimeoutError when the
  /// final attempt timed out.
  ModelResponse complete(const PromptBundle& bundle);

  /// Appends one JSON line per call (bundle + response) to `path`.
  void set_transcript(const std::filesystem::path& path);

  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  ModelResponse mock_complete(const PromptBundle& bundle);
  ModelResponse remote_complete(const PromptBundle& bundle);
  std::string remote_request_body(const PromptBundle& bundle) const;
  void log(const PromptBundle& bundle, const ModelResponse& response);

  ModelConfig cfg_;
  TruthMap truths_;
  std::shared_ptr<Transport> transport_;
  std::counting_semaphore<1024> in_flight_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> script_pos_{0};
  std::mutex log_mutex_;
  std::ofstream transcript_;
};

/// Outcome of the two-stage pipeline for one (sample, task).
struct PredictionTrace {
  std::string sample_id;
  IndicatorTask task = IndicatorTask::PopulationDensity;
  AblationFlags flags;
  std::optional<Rationale> rationale;
  std::string raw_answer;
  BinLabel bin;
  std::vector<std::string> prompt_hashes;
  std::string template_version{kTemplateVersion};
  int gateway_calls = 0;
};

struct PredictOptions {
  bool answer_images = true;
};

/// Rationale then answer when flags.use_cot, answer only otherwise. Errors
/// are rethrown with the sample id prefixed to the message.
PredictionTrace predict_sample(const GeoContext& ctx, IndicatorTask task, const BinScale& scale,
                               const AblationFlags& flags, ChatGateway& gateway,
                               const PredictOptions& options = {});

void to_json(nlohmann::json& j, const AblationFlags& v);
void from_json(const nlohmann::json& j, AblationFlags& v);
void to_json(nlohmann::json& j, const PromptBundle& v);

}  // namespace svllm
