#include <cstdlib>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <fmt/core.h>
#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "svllm/http.hpp"
#include "test_support.hpp"

namespace svllm {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the svllm binary with `args`; `env` is prefixed to the command line.
Result run_cli(const testing::TempDir& dir, const std::string& args, const std::string& env = "") {
  const fs::path out = dir / "stdout.txt";
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = fmt::format("{} SVLLM_OFFLINE=1 '{}' {} >'{}' 2>'{}'", env, SVLLM_CLI_PATH, args,
                                      out.string(), err.string());
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = testing::read_text(out);
  r.err = testing::read_text(err);
  return r;
}

std::vector<std::string> read_text_lines(const fs::path& p) {
  std::vector<std::string> out;
  std::istringstream in(testing::read_text(p));
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// Writes a small synthetic-city config into `dir` and returns its path.
fs::path write_config(const testing::TempDir& dir, json overrides = json::object()) {
  json cfg = {{"city", {{"name", "Synthopolis"},
                        {"bbox", {{"min_lat", 22.25}, {"max_lat", 22.35}, {"min_lon", 114.10}, {"max_lon", 114.25}}}}},
              {"seed", 42},
              {"workdir", "run"},
              {"workers", 2},
              {"retrieval", {{"mode", "replay"}, {"backoff_ms", 0}, {"max_attempts", 1}}},
              {"model", {{"provider", "mock_echo"}}},
              {"synth", {{"n_points", 150}}}};
  cfg.merge_patch(overrides);
  const fs::path p = dir / "cfg.json";
  write_file_atomic(p, cfg.dump(2));
  return p;
}

TEST(Cli, HelpAndUsageErrors) {
  testing::TempDir dir;
  EXPECT_EQ(run_cli(dir, "--help").code, 0);
  EXPECT_EQ(run_cli(dir, "").code, 2);
  EXPECT_EQ(run_cli(dir, "frobnicate").code, 2);
  EXPECT_EQ(run_cli(dir, "run").code, 2);  // --config is required
  EXPECT_EQ(run_cli(dir, "run -c " + (dir / "nope.json").string()).code, 2);
  const auto cfg = write_config(dir);
  EXPECT_EQ(run_cli(dir, "predict -c " + cfg.string() + " --preset everything").code, 2);
  EXPECT_EQ(run_cli(dir, "retrieve -c " + cfg.string() + " --mode sometimes").code, 2);
}

TEST(Cli, ConfigErrorsExitWithTwo) {
  testing::TempDir dir;
  auto r = run_cli(dir, "config -c " + write_config(dir, {{"workerz", 3}}).string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("workerz"), std::string::npos) << r.err;
  r = run_cli(dir, "sample -c " + write_config(dir, {{"split", {{"train", 0.9}, {"val", 0.1}, {"test", 0.3}}}}).string());
  EXPECT_EQ(r.code, 2) << r.err;
}

TEST(Cli, ConfigPrintsResolvedJsonWithoutSecrets) {
  testing::TempDir dir;
  const auto r = run_cli(dir, "config -c " + write_config(dir).string() + " --seed 9",
                         "SVLLM_CHAT_API_KEY=sk-cli-secret SVLLM_STREETVIEW_KEY=sv-cli-secret");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("seed"), 9);
  EXPECT_EQ(r.out.find("cli-secret"), std::string::npos);
}

TEST(Cli, FullRunThenSkip) {
  testing::TempDir dir;
  const auto cfg = write_config(dir);
  auto r = run_cli(dir, "run -c " + cfg.string());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* stage : {"synth", "sample", "retrieve", "predict.llm", "baseline", "evaluate", "ablate", "bias"}) {
    EXPECT_NE(r.out.find(std::string(stage) + ": done"), std::string::npos) << stage << "\n" << r.out;
  }
  EXPECT_TRUE(fs::exists(dir / "run/results/table2_bin.txt"));
  EXPECT_TRUE(fs::exists(dir / "run/results/table3.csv"));

  r = run_cli(dir, "run -q -c " + cfg.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.find(": done"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("retrieve: skipped"), std::string::npos) << r.out;
  EXPECT_EQ(r.err.find("[svllm]"), std::string::npos) << r.err;  // --quiet drops progress, not warnings

  r = run_cli(dir, "evaluate --force -q -c " + cfg.string());
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("evaluate: done"), std::string::npos);
}

TEST(Cli, PresetPredictionsGetTheirOwnFile) {
  testing::TempDir dir;
  const auto cfg = write_config(dir).string();
  for (const char* stage : {"synth", "sample", "retrieve"}) ASSERT_EQ(run_cli(dir, fmt::format("{} -q -c {}", stage, cfg)).code, 0);
  const auto r = run_cli(dir, "predict -q --preset no-cot -c " + cfg);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "run/predictions/llm-no-cot.jsonl"));
  EXPECT_FALSE(fs::exists(dir / "run/predictions/llm.jsonl"));
}

TEST(Cli, MissingArtifactExitsWithFour) {
  testing::TempDir dir;
  const auto r = run_cli(dir, "retrieve -c " + write_config(dir).string());
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("svllm sample"), std::string::npos) << r.err;
}

TEST(Cli, ReplayMissExitsWithThree) {
  testing::TempDir dir;
  const auto cfg = write_config(dir).string();
  ASSERT_EQ(run_cli(dir, "synth -q -c " + cfg).code, 0);
  ASSERT_EQ(run_cli(dir, "sample -q -c " + cfg).code, 0);
  fs::remove_all(dir / "run/fixtures");
  const auto r = run_cli(dir, "retrieve -q -c " + cfg);
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("FixtureMiss"), std::string::npos) << r.err;
}

TEST(Cli, LiveModeWithoutNetworkExitsWithThree) {
  testing::TempDir dir;
  const auto cfg = write_config(dir, {{"retrieval", {{"endpoints", {{"nominatim", "http://127.0.0.1:9"}}}}}}).string();
  ASSERT_EQ(run_cli(dir, "synth -q -c " + cfg).code, 0);
  ASSERT_EQ(run_cli(dir, "sample -q -c " + cfg).code, 0);
  const auto r = run_cli(dir, "retrieve -q --mode live -c " + cfg);
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, ExternalPredictionsImport) {
  testing::TempDir dir;
  const auto cfg = write_config(dir).string();
  for (const char* stage : {"synth", "sample", "retrieve"}) ASSERT_EQ(run_cli(dir, fmt::format("{} -q -c {}", stage, cfg)).code, 0);
  write_file_atomic(dir / "ext.csv", "sample_id,task,prediction\nnot-a-sample,ndvi,3.2\n");
  auto r = run_cli(dir, fmt::format("baseline -q -c {} --external {}", cfg, (dir / "ext.csv").string()));
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("not-a-sample"), std::string::npos) << r.err;

  // A valid file names one test sample.
  const auto contexts = read_text_lines(dir / "run/contexts.jsonl");
  ASSERT_GT(contexts.size(), 1u);
  const std::string id = json::parse(contexts[1]).at("id");
  write_file_atomic(dir / "ext.csv", "sample_id,task,prediction\n" + id + ",ndvi,3.2\n");
  r = run_cli(dir, fmt::format("baseline -q -c {} --external {} --external-name mlp", cfg, (dir / "ext.csv").string()));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "run/predictions/mlp.jsonl"));
}

}  // namespace
}  // namespace svllm
