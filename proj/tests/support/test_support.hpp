#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "svllm/baselines.hpp"
#include "svllm/config.hpp"
#include "svllm/error.hpp"
#include "svllm/http.hpp"
#include "svllm/retrieval.hpp"

// Asserts that `stmt` throws svllm::Error of the given kind.
#define EXPECT_SVLLM_ERROR(stmt, error_kind)                                  \
  do {                                                                        \
    try {                                                                     \
      stmt;                                                                   \
      ADD_FAILURE() << #stmt " did not throw";                                \
    } catch (const ::svllm::Error& svllm_err_) {                              \
      EXPECT_EQ(svllm_err_.kind(), ::svllm::ErrorKind::error_kind) << svllm_err_.what(); \
    }                                                                         \
  } while (0)

namespace svllm::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "svllm");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

/// Synthetic-city config rooted at `workdir`, replay mode, with provider
/// endpoints pointing at a closed local port.
PipelineConfig synth_config(const std::filesystem::path& workdir, std::size_t n_points = 500,
                            ModelProvider provider = ModelProvider::MockEcho, std::uint64_t seed = 42);

/// Transport that refuses every request (status 0) and counts attempts.
std::shared_ptr<CallbackTransport> refusing_transport();

// Brute-force oracles, deliberately written differently from the library:
// long double accumulation, textbook formulas, full sorts.
double oracle_mae(std::span<const double> y, std::span<const double> yhat);
double oracle_rmse(std::span<const double> y, std::span<const double> yhat);
double oracle_r2(std::span<const double> y, std::span<const double> yhat);
double oracle_knn(std::span<const LabeledPoint> train, const GeoPoint& query, std::size_t k);
double oracle_pearson(std::span<const double> x, std::span<const double> y);

std::vector<GeoPoint> random_points(std::mt19937_64& rng, std::size_t n, const BBox& box,
                                    const std::string& prefix = "q");

/// Hand-built context with an address, two places and an available image.
GeoContext sample_context(const std::string& id = "s1");

std::string read_text(const std::filesystem::path& p);

}  // namespace svllm::testing
