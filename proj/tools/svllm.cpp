// svllm: command-line driver for the prediction pipeline.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "svllm/config.hpp"
#include "svllm/error.hpp"
#include "svllm/pipeline.hpp"

namespace {

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string preset;
  bool force = false;
  bool quiet = false;
  std::string external;
  std::string external_name = "external";
  std::string external_space = "bin";
};

svllm::PipelineConfig prepare(const Args& a) {
  using svllm::Error;
  using svllm::ErrorKind;
  svllm::PipelineConfig cfg = svllm::load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (!a.mode.empty()) {
    const auto m = svllm::parse_provider_mode(a.mode);
    if (!m) throw Error(ErrorKind::ConfigError, "unknown mode '" + a.mode + "'");
    cfg.retrieval.mode = *m;
  }
  if (!a.preset.empty()) {
    const auto p = svllm::parse_preset(a.preset);
    if (!p) throw Error(ErrorKind::ConfigError, "unknown preset '" + a.preset + "'");
    cfg.preset = *p;
  }
  cfg.finalize();
  cfg.validate();
  svllm::apply_env_credentials(cfg);
  return cfg;
}

void report(const svllm::StageResult& r) {
  fmt::print("{}: {}", r.stage, r.skipped ? "skipped (up to date)" : "done");
  for (const auto& [k, v] : r.counts.items()) fmt::print(" {}={}", k, v.dump());
  fmt::print("\n");
  for (const auto& w : r.warnings) fmt::print(stderr, "warning: {}\n", w);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Urban indicator prediction from geographic context and street-view imagery"};
  app.require_subcommand(1);
  Args args;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config,-c", args.config, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", args.seed, "override the global seed");
    sub->add_option("--mode", args.mode, "provider mode")
        ->check(CLI::IsMember({"live", "replay", "record"}));
    sub->add_option("--preset", args.preset, "ablation preset for predict")
        ->check(CLI::IsMember({"full", "no-cot", "no-svi", "no-text"}));
    sub->add_flag("--force", args.force, "recompute even when the manifest matches");
    sub->add_flag("--quiet,-q", args.quiet, "no progress output");
  };

  struct Command {
    const char* name;
    const char* help;
  };
  const std::vector<Command> commands = {
      {"synth", "generate a synthetic city with replay fixtures"},
      {"sample", "order points, split them and fit bin scales"},
      {"retrieve", "fetch addresses, nearby places and street views for the test split"},
      {"predict", "query the model for every test sample and task"},
      {"baseline", "fit KNN and GBRT on coordinates; import external predictions"},
      {"evaluate", "score predictions and render comparison tables"},
      {"ablate", "run the four prompt presets on the ablation task"},
      {"bias", "correlate prediction bias with nearby POI counts"},
      {"run", "all stages in order"},
      {"config", "print the resolved configuration"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    common(sub);
    subs.push_back(sub);
    if (std::string(c.name) == "baseline") {
      sub->add_option("--external", args.external, "CSV with sample_id,task,prediction")
          ->check(CLI::ExistingFile);
      sub->add_option("--external-name", args.external_name, "model name for imported predictions");
      sub->add_option("--external-space", args.external_space, "value space of imported predictions")
          ->check(CLI::IsMember({"bin", "unit"}));
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const svllm::PipelineConfig cfg = prepare(args);
    svllm::StageOptions options;
    options.force = args.force;
    if (!args.quiet) options.log = [](const std::string& m) { fmt::print(stderr, "[svllm] {}\n", m); };

    if (command == "config") {
      fmt::print("{}\n", svllm::config_to_json(cfg).dump(2));
    } else if (command == "synth") {
      report(svllm::cmd_synth(cfg, options));
    } else if (command == "sample") {
      report(svllm::cmd_sample(cfg, options));
    } else if (command == "retrieve") {
      report(svllm::cmd_retrieve(cfg, options));
    } else if (command == "predict") {
      report(svllm::cmd_predict(cfg, options));
    } else if (command == "baseline") {
      std::optional<svllm::ExternalImport> ext;
      if (!args.external.empty()) {
        ext = svllm::ExternalImport{args.external, args.external_name,
                                    args.external_space == "unit" ? svllm::ValueSpace::Unit
                                                                  : svllm::ValueSpace::Bin};
      }
      report(svllm::cmd_baseline(cfg, options, ext));
    } else if (command == "evaluate") {
      report(svllm::cmd_evaluate(cfg, options));
    } else if (command == "ablate") {
      report(svllm::cmd_ablate(cfg, options));
    } else if (command == "bias") {
      report(svllm::cmd_bias(cfg, options));
    } else if (command == "run") {
      for (const auto& r : svllm::cmd_run(cfg, options)) report(r);
    }
  } catch (const svllm::Error& e) {
    fmt::print(stderr, "svllm {}: {}\n", command, e.what());
    return svllm::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    fmt::print(stderr, "svllm {}: {}\n", command, e.what());
    return 4;
  }
  return 0;
}
