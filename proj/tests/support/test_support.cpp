#include "test_support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>

#include <unistd.h>

namespace svllm::testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

PipelineConfig synth_config(const fs::path& workdir, std::size_t n_points, ModelProvider provider,
                            std::uint64_t seed) {
  PipelineConfig cfg;
  cfg.workdir = workdir;
  cfg.seed = seed;
  cfg.workers = 4;
  cfg.synth.n_points = n_points;
  cfg.retrieval.mode = ProviderMode::Replay;
  cfg.retrieval.endpoints.nominatim = "http://127.0.0.1:9/nominatim";
  cfg.retrieval.endpoints.overpass = "http://127.0.0.1:9/overpass";
  cfg.retrieval.endpoints.streetview = "http://127.0.0.1:9/streetview";
  cfg.retrieval.backoff_ms = 0;
  cfg.retrieval.max_attempts = 1;
  cfg.model.provider = provider;
  cfg.model.endpoint = "http://127.0.0.1:9/v1";
  cfg.model.backoff_ms = 0;
  cfg.finalize();
  cfg.validate();
  return cfg;
}

std::shared_ptr<CallbackTransport> refusing_transport() {
  return std::make_shared<CallbackTransport>([](const HttpRequest&) {
    HttpResponse r;
    r.error = "network disabled in tests";
    return r;
  });
}

double oracle_mae(std::span<const double> y, std::span<const double> yhat) {
  long double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::fabs(static_cast<long double>(y[i]) - yhat[i]);
  return static_cast<double>(s / y.size());
}

double oracle_rmse(std::span<const double> y, std::span<const double> yhat) {
  long double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const long double d = static_cast<long double>(y[i]) - yhat[i];
    s += d * d;
  }
  return static_cast<double>(std::sqrt(s / y.size()));
}

double oracle_r2(std::span<const double> y, std::span<const double> yhat) {
  long double mean = 0;
  for (double v : y) mean += v;
  mean /= y.size();
  long double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - static_cast<long double>(yhat[i])) * (y[i] - static_cast<long double>(yhat[i]));
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  return static_cast<double>(1.0L - ss_res / ss_tot);
}

double oracle_knn(std::span<const LabeledPoint> train, const GeoPoint& query, std::size_t k) {
  std::vector<std::tuple<double, std::string, std::size_t>> all;
  for (std::size_t i = 0; i < train.size(); ++i) {
    all.emplace_back(haversine_distance(query, train[i].point), train[i].point.id(), i);
  }
  std::sort(all.begin(), all.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += train[std::get<2>(all[i])].target;
  return sum / static_cast<double>(k);
}

double oracle_pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  long double sx = 0, sy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += x[i];
    sy += y[i];
  }
  const long double mx = sx / n, my = sy / n;
  long double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (x[i] - mx) * (y[i] - my);
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(cov / std::sqrt(vx * vy));
}

std::vector<GeoPoint> random_points(std::mt19937_64& rng, std::size_t n, const BBox& box,
                                    const std::string& prefix) {
  std::uniform_real_distribution<double> lat(box.min_lat, box.max_lat);
  std::uniform_real_distribution<double> lon(box.min_lon, box.max_lon);
  std::vector<GeoPoint> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = lat(rng);
    const double b = lon(rng);
    out.emplace_back(a, b, prefix + std::to_string(i));
  }
  return out;
}

GeoContext sample_context(const std::string& id) {
  GeoContext ctx;
  ctx.point = GeoPoint(22.3, 114.17, id);
  ctx.address.display_name = "12 Granite Road, Harbour District, Synthopolis, SY-0042, Synthland";
  ctx.address.components = {{"house_number", "12"},
                            {"road", "Granite Road"},
                            {"suburb", "Harbour District"},
                            {"city", "Synthopolis"},
                            {"postcode", "SY-0042"},
                            {"country", "Synthland"}};
  ctx.address.provider = "nominatim";
  ctx.address.retrieved_at = "2024-01-01T00:00:00Z";
  NearbyPlace a;
  a.name = "Cedar Market";
  a.location = GeoPoint(22.3005, 114.1702, "node/1");
  a.distance_m = 60.5;
  a.category = "shop=supermarket";
  NearbyPlace b;
  b.name = "Willow Library";
  b.location = GeoPoint(22.301, 114.171, "node/2");
  b.distance_m = 148.0;
  b.category = "amenity=library";
  ctx.nearby = {a, b};
  ctx.image.status = ImageStatus::Available;
  ctx.image.local_path = "img/abc.jpg";
  ctx.image.capture_point = GeoPoint(22.30001, 114.17001, id);
  ctx.image.offset_m = 1.5;
  ctx.image.content_hash = "abc";
  ctx.image.probes_tried = 1;
  return ctx;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace svllm::testing
