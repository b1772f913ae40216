#include "svllm/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "svllm/error.hpp"
#include "svllm/http.hpp"

namespace svllm {

using nlohmann::json;

double knn_predict(std::span<const LabeledPoint> train, const GeoPoint& query,
                   const KnnConfig& cfg) {
  if (train.empty()) throw Error(ErrorKind::EmptyTraining, "knn: no training points");
  if (cfg.k == 0 || cfg.k > train.size()) {
    throw Error(ErrorKind::KTooLarge,
                fmt::format("knn: k = {} with {} training points", cfg.k, train.size()));
  }
  struct Candidate {
    double d;
    const std::string* id;
    std::size_t pos;
  };
  std::vector<Candidate> cand;
  cand.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    cand.push_back({haversine_distance(query, train[i].point), &train[i].point.id(), i});
  }
  const auto by_rank = [](const Candidate& a, const Candidate& b) {
    return std::tie(a.d, *a.id, a.pos) < std::tie(b.d, *b.id, b.pos);
  };
  const auto kth = cand.begin() + static_cast<std::ptrdiff_t>(cfg.k);
  std::partial_sort(cand.begin(), kth, cand.end(), by_rank);
  double sum = 0.0;
  for (auto it = cand.begin(); it != kth; ++it) sum += train[it->pos].target;
  return sum / static_cast<double>(cfg.k);
}

// ---------------------------------------------------------------------------

void GbrtConfig::validate() const {
  if (rounds < 1) throw Error(ErrorKind::ConfigError, "gbrt rounds must be >= 1");
  if (max_depth < 1) throw Error(ErrorKind::ConfigError, "gbrt max_depth must be >= 1");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
    throw Error(ErrorKind::ConfigError, "gbrt learning_rate must be in (0, 1]");
  }
  if (min_samples_leaf == 0) throw Error(ErrorKind::ConfigError, "gbrt min_samples_leaf must be >= 1");
}

double RegressionTree::predict(std::span<const double> x) const {
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    const auto& n = nodes[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left
                                                                                        : n.right);
  }
  return nodes[i].value;
}

double GbrtModel::predict(std::span<const double> x) const {
  double sum = 0.0;
  for (const auto& t : trees) sum += t.predict(x);
  return init_value + learning_rate * sum;
}

double gbrt_predict(const GbrtModel& model, std::span<const double> features) {
  if (features.size() != model.n_features) {
    throw Error(ErrorKind::LengthMismatch,
                fmt::format("gbrt: {} features given, model expects {}", features.size(),
                            model.n_features));
  }
  return model.predict(features);
}

std::vector<double> coordinate_features(const GeoPoint& p) { return {p.lat(), p.lon()}; }

namespace {

struct TreeBuilder {
  const std::vector<std::vector<double>>& x;
  const std::vector<double>& residual;
  const GbrtConfig& cfg;
  std::size_t n_features;
  RegressionTree tree;

  double mean_of(const std::vector<std::size_t>& rows) const {
    double s = 0.0;
    for (auto r : rows) s += residual[r];
    return s / static_cast<double>(rows.size());
  }

  int build(std::vector<std::size_t> rows, int depth) {
    const int index = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(TreeNode{});

    double total = 0.0;
    for (auto r : rows) total += residual[r];
    const double n = static_cast<double>(rows.size());
    const double parent_score = total * total / n;

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_score = parent_score;
    if (depth < cfg.max_depth && rows.size() >= 2 * cfg.min_samples_leaf) {
      std::vector<std::size_t> order = rows;
      for (std::size_t f = 0; f < n_features; ++f) {
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
          return std::tie(x[a][f], a) < std::tie(x[b][f], b);
        });
        double left = 0.0;
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
          left += residual[order[i]];
          const double lo = x[order[i]][f];
          const double hi = x[order[i + 1]][f];
          if (lo == hi) continue;
          const std::size_t n_left = i + 1;
          const std::size_t n_right = order.size() - n_left;
          if (n_left < cfg.min_samples_leaf || n_right < cfg.min_samples_leaf) continue;
          const double right = total - left;
          const double score = left * left / static_cast<double>(n_left) +
                               right * right / static_cast<double>(n_right);
          // SSE = sum r^2 - score; require a real reduction, not round-off.
          if (score > best_score + 1e-12 * std::max(1.0, std::abs(best_score))) {
            best_score = score;
            best_feature = static_cast<int>(f);
            double mid = lo + (hi - lo) / 2.0;
            if (!(mid < hi)) mid = lo;
            best_threshold = mid;
          }
        }
      }
    }

    if (best_feature < 0) {
      tree.nodes[static_cast<std::size_t>(index)].value = total / n;
      return index;
    }
    std::vector<std::size_t> left_rows, right_rows;
    for (auto r : rows) {
      (x[r][static_cast<std::size_t>(best_feature)] <= best_threshold ? left_rows : right_rows)
          .push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const int l = build(std::move(left_rows), depth + 1);
    const int r = build(std::move(right_rows), depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(index)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return index;
  }
};

double sse(const std::vector<double>& y, const std::vector<double>& pred) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - pred[i]) * (y[i] - pred[i]);
  return s;
}

RegressionTree zero_tree() {
  RegressionTree t;
  t.nodes.push_back(TreeNode{});
  return t;
}

}  // namespace

GbrtModel gbrt_fit(std::span<const std::vector<double>> features, std::span<const double> targets,
                   const GbrtConfig& cfg) {
  cfg.validate();
  if (features.size() != targets.size()) {
    throw Error(ErrorKind::LengthMismatch, fmt::format("gbrt: {} feature rows vs {} targets",
                                                       features.size(), targets.size()));
  }
  if (features.size() < 2) throw Error(ErrorKind::TooFewSamples, "gbrt needs at least 2 rows");
  const std::size_t n_features = features.front().size();
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != n_features) {
      throw Error(ErrorKind::LengthMismatch, fmt::format("gbrt: row {} has {} features, expected {}",
                                                         i, features[i].size(), n_features));
    }
    if (!std::isfinite(targets[i]) ||
        !std::all_of(features[i].begin(), features[i].end(), [](double v) { return std::isfinite(v); })) {
      throw Error(ErrorKind::NonFinite, fmt::format("gbrt: row {} is not finite", i));
    }
  }

  // Canonical row order makes the fit independent of input order.
  std::vector<std::size_t> perm(features.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(features[a], targets[a]) < std::tie(features[b], targets[b]);
  });
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (auto i : perm) {
    x.push_back(features[i]);
    y.push_back(targets[i]);
  }

  const bool constant_y = std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); });
  const bool identical_x = std::all_of(x.begin(), x.end(), [&](const auto& r) { return r == x.front(); });
  if (identical_x && !constant_y) {
    throw Error(ErrorKind::DegenerateFeatures, "gbrt: all feature rows are identical");
  }

  GbrtModel model;
  model.n_features = n_features;
  model.learning_rate = cfg.learning_rate;
  model.init_value =
      constant_y ? y.front() : std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());

  std::vector<double> pred(y.size(), model.init_value);
  std::vector<double> tree_sum(y.size(), 0.0);
  double current = sse(y, pred);
  model.train_sse.push_back(current);

  for (int round = 0; round < cfg.rounds; ++round) {
    std::vector<double> residual(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) residual[i] = y[i] - pred[i];

    std::vector<std::size_t> rows(y.size());
    std::iota(rows.begin(), rows.end(), 0);
    TreeBuilder builder{x, residual, cfg, n_features, {}};
    builder.build(std::move(rows), 0);

    std::vector<double> next_sum(y.size());
    std::vector<double> next_pred(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      next_sum[i] = tree_sum[i] + builder.tree.predict(x[i]);
      next_pred[i] = model.init_value + cfg.learning_rate * next_sum[i];
    }
    const double next = sse(y, next_pred);
    if (next <= current) {
      model.trees.push_back(std::move(builder.tree));
      tree_sum = std::move(next_sum);
      pred = std::move(next_pred);
      current = next;
    } else {
      model.trees.push_back(zero_tree());
    }
    model.train_sse.push_back(current);
  }
  return model;
}

void to_json(json& j, const GbrtModel& model) {
  json trees = json::array();
  for (const auto& t : model.trees) {
    json nodes = json::array();
    for (const auto& n : t.nodes) {
      if (n.feature < 0) {
        nodes.push_back({{"value", n.value}});
      } else {
        nodes.push_back(
            {{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
      }
    }
    trees.push_back(std::move(nodes));
  }
  j = json{{"kind", "gbrt"},
           {"init_value", model.init_value},
           {"learning_rate", model.learning_rate},
           {"n_features", model.n_features},
           {"train_sse", model.train_sse},
           {"trees", trees}};
}

void from_json(const json& j, GbrtModel& model) {
  model = GbrtModel{};
  model.init_value = j.at("init_value").get<double>();
  model.learning_rate = j.at("learning_rate").get<double>();
  model.n_features = j.at("n_features").get<std::size_t>();
  model.train_sse = j.value("train_sse", std::vector<double>{});
  for (const auto& t : j.at("trees")) {
    RegressionTree tree;
    for (const auto& n : t) {
      TreeNode node;
      if (n.contains("feature")) {
        node.feature = n.at("feature").get<int>();
        node.threshold = n.at("threshold").get<double>();
        node.left = n.at("left").get<int>();
        node.right = n.at("right").get<int>();
      } else {
        node.value = n.at("value").get<double>();
      }
      tree.nodes.push_back(node);
    }
    const int size = static_cast<int>(tree.nodes.size());
    for (const auto& node : tree.nodes) {
      if (node.feature >= 0 &&
          (node.left <= 0 || node.left >= size || node.right <= 0 || node.right >= size ||
           static_cast<std::size_t>(node.feature) >= model.n_features)) {
        throw Error(ErrorKind::SchemaError, "gbrt model: invalid tree node");
      }
    }
    if (tree.nodes.empty()) throw Error(ErrorKind::SchemaError, "gbrt model: empty tree");
    model.trees.push_back(std::move(tree));
  }
}

// ---------------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::vector<ExternalPrediction> parse_external_predictions(std::string_view csv,
                                                           const std::set<std::string>& known_ids) {
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::SchemaError, "external predictions: empty file");
  const auto header = split_csv_line(line);
  const auto column = [&](std::string_view name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw Error(ErrorKind::SchemaError,
                  fmt::format("external predictions: missing column '{}'", name));
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_id = column("sample_id");
  const std::size_t c_task = column("task");
  const std::size_t c_pred = column("prediction");
  const std::size_t needed = std::max({c_id, c_task, c_pred}) + 1;

  std::vector<ExternalPrediction> out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto cells = split_csv_line(line);
    if (cells.size() < needed) {
      throw Error(ErrorKind::SchemaError,
                  fmt::format("external predictions row {}: expected {} columns, got {}", row,
                              header.size(), cells.size()));
    }
    ExternalPrediction p;
    p.row = row;
    p.sample_id = cells[c_id];
    if (!known_ids.count(p.sample_id)) {
      throw Error(ErrorKind::UnknownSampleId,
                  fmt::format("external predictions row {}: unknown sample id '{}'", row, p.sample_id));
    }
    const auto task = parse_task(cells[c_task]);
    if (!task) {
      throw Error(ErrorKind::SchemaError,
                  fmt::format("external predictions row {}: unknown task '{}'", row, cells[c_task]));
    }
    p.task = *task;
    std::size_t used = 0;
    try {
      p.prediction = std::stod(cells[c_pred], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != cells[c_pred].size() || !std::isfinite(p.prediction)) {
      throw Error(ErrorKind::SchemaError,
                  fmt::format("external predictions row {}: bad prediction '{}'", row, cells[c_pred]));
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<ExternalPrediction> import_external_predictions(const std::filesystem::path& path,
                                                            const std::set<std::string>& known_ids) {
  return parse_external_predictions(read_file(path), known_ids);
}

}  // namespace svllm
