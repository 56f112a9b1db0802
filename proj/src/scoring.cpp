#include "histoad/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "histoad/error.hpp"

namespace histoad {

const char* to_string(KnnMode m) { return m == KnnMode::kth ? "kth" : "mean_of_k"; }

KnnMode parse_knn_mode(const std::string& s) {
  if (s == "mean_of_k") return KnnMode::mean_of_k;
  if (s == "kth") return KnnMode::kth;
  fail(ErrorCode::config, "unknown knn mode '" + s + "' (expected mean_of_k|kth)");
}

namespace {

std::string format_g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double knn_from_distances(std::vector<double>& dist, const KnnConfig& config) {
  const auto k = static_cast<std::size_t>(config.k);
  std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
  std::sort(dist.begin(), dist.begin() + k);
  if (config.mode == KnnMode::kth) return dist[k - 1];
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += dist[i];
  return sum / static_cast<double>(k);
}

void check_knn(const FeatureMatrix& reference, const KnnConfig& config) {
  require(config.k >= 1, ErrorCode::config, "knn: k must be >= 1");
  require(static_cast<std::size_t>(config.k) <= reference.size(), ErrorCode::config,
          "knn: k = " + std::to_string(config.k) + " exceeds reference size " +
              std::to_string(reference.size()));
}

}  // namespace

double knn_score(const Eigen::Ref<const Eigen::VectorXd>& query,
                 const FeatureMatrix& reference, const KnnConfig& config) {
  check_knn(reference, config);
  require(query.size() == reference.dim(), ErrorCode::dim_mismatch,
          "knn: query and reference dimensions differ");
  std::vector<double> dist(reference.size());
  for (Eigen::Index i = 0; i < reference.rows.rows(); ++i)
    dist[static_cast<std::size_t>(i)] =
        (reference.rows.row(i).cast<double>().transpose() - query).norm();
  return knn_from_distances(dist, config);
}

std::vector<double> knn_scores(const FeatureMatrix& queries, const FeatureMatrix& reference,
                               const KnnConfig& config, int jobs) {
  check_knn(reference, config);
  if (queries.empty()) return {};
  require(queries.dim() == reference.dim(), ErrorCode::dim_mismatch,
          "knn: query and reference dimensions differ");
  const Eigen::MatrixXd ref = reference.rows.cast<double>();
  std::vector<double> out(queries.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<double> dist(reference.size());
    for (std::size_t q = begin; q < end; ++q) {
      const Eigen::RowVectorXd query = queries.rows.row(static_cast<Eigen::Index>(q)).cast<double>();
      for (Eigen::Index i = 0; i < ref.rows(); ++i)
        dist[static_cast<std::size_t>(i)] = (ref.row(i) - query).norm();
      out[q] = knn_from_distances(dist, config);
    }
  };
  const std::size_t n = queries.size();
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, n);
  if (workers == 1) {
    work(0, n);
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b < e) pool.emplace_back(work, b, e);
  }
  for (auto& t : pool) t.join();
  return out;
}

double classifier_score(const MlpParams& params, const Eigen::Ref<const Eigen::VectorXd>& x) {
  require(!params.layers.empty() && params.output_dim() == 1, ErrorCode::dim_mismatch,
          "classifier_score: head must have a single output");
  return sigmoid(forward<double>(params, x)[0]);
}

double tta_score(std::span<const double> view_scores) {
  require(!view_scores.empty(), ErrorCode::invalid_input, "tta_score: no views");
  // Incremental mean: identical views return their value exactly.
  double mean = 0.0;
  for (std::size_t i = 0; i < view_scores.size(); ++i)
    mean += (view_scores[i] - mean) / static_cast<double>(i + 1);
  return mean;
}

// --- score tables --------------------------------------------------------------

std::vector<std::pair<std::string, std::vector<std::size_t>>> ScoreTable::by_slide() const {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& id = rows[i].coord.slide_id;
    auto [it, inserted] = index.try_emplace(id, out.size());
    if (inserted) out.push_back({id, {}});
    out[it->second].second.push_back(i);
  }
  return out;
}

void ScoreTable::validate() const {
  std::set<std::tuple<std::string, int, int>> keys;
  for (const auto& r : rows) {
    require(std::isfinite(r.score), ErrorCode::invalid_input,
            "non-finite score for " + r.coord.slide_id);
    require(keys.emplace(r.coord.slide_id, r.coord.x, r.coord.y).second,
            ErrorCode::invalid_input,
            "duplicate score key (" + r.coord.slide_id + "," + std::to_string(r.coord.x) +
                "," + std::to_string(r.coord.y) + ")");
  }
}

void write_score_csv(const std::string& path, const ScoreTable& table) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
  out << "slide_id,x,y,score\n";
  for (const auto& r : table.rows)
    out << r.coord.slide_id << ',' << r.coord.x << ',' << r.coord.y << ','
        << format_g9(r.score) << '\n';
}

ScoreTable read_score_csv(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot read " + path);
  std::string line;
  std::getline(in, line);
  require(line == "slide_id,x,y,score", ErrorCode::invalid_input,
          path + ": expected header slide_id,x,y,score");
  ScoreTable table;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, x, y, s;
    std::getline(ss, id, ',');
    std::getline(ss, x, ',');
    std::getline(ss, y, ',');
    std::getline(ss, s, ',');
    try {
      table.rows.push_back({{id, std::stoi(x), std::stoi(y)}, std::stod(s)});
    } catch (const std::exception&) {
      fail(ErrorCode::invalid_input, path + ": malformed line '" + line + "'");
    }
  }
  return table;
}

// --- aggregation ---------------------------------------------------------------

void AggregationConfig::validate() const {
  require(top_fraction > 0.0 && top_fraction <= 1.0, ErrorCode::config,
          "top_fraction must lie in (0, 1]");
}

std::size_t top_count(std::size_t n, double top_fraction) {
  const auto m = static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(m, 1, std::max<std::size_t>(n, 1));
}

double aggregate_slide(std::span<const ScoreRow> rows, const AggregationConfig& config) {
  config.validate();
  require(!rows.empty(), ErrorCode::invalid_input, "aggregate_slide: slide has no patches");
  const std::size_t m = top_count(rows.size(), config.top_fraction);
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto before = [&](std::size_t a, std::size_t b) {
    const auto& ra = rows[a];
    const auto& rb = rows[b];
    if (ra.score != rb.score) return ra.score > rb.score;
    if (ra.coord.x != rb.coord.x) return ra.coord.x < rb.coord.x;
    return ra.coord.y < rb.coord.y;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                    before);
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) sum += rows[order[i]].score;
  return sum / static_cast<double>(m);
}

std::vector<SlideScore> aggregate_all(const ScoreTable& table, const AggregationConfig& config) {
  std::vector<SlideScore> out;
  std::vector<ScoreRow> slide_rows;
  for (const auto& [id, idx] : table.by_slide()) {
    slide_rows.clear();
    for (auto i : idx) slide_rows.push_back(table.rows[i]);
    out.push_back({id, aggregate_slide(slide_rows, config)});
  }
  return out;
}

void write_slide_score_csv(const std::string& path, const std::vector<SlideScore>& scores) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
  out << "slide_id,score\n";
  for (const auto& s : scores) out << s.slide_id << ',' << format_g9(s.score) << '\n';
}

std::vector<SlideScore> read_slide_score_csv(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot read " + path);
  std::string line;
  std::getline(in, line);
  require(line == "slide_id,score", ErrorCode::invalid_input,
          path + ": expected header slide_id,score");
  std::vector<SlideScore> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    require(comma != std::string::npos, ErrorCode::invalid_input,
            path + ": malformed line '" + line + "'");
    try {
      out.push_back({line.substr(0, comma), std::stod(line.substr(comma + 1))});
    } catch (const std::exception&) {
      fail(ErrorCode::invalid_input, path + ": malformed line '" + line + "'");
    }
  }
  return out;
}

// --- heatmaps ------------------------------------------------------------------

HeatmapCanvas::HeatmapCanvas(int w, int h) : width(w), height(h) {
  require(w >= 1 && h >= 1, ErrorCode::invalid_input, "heatmap canvas must be non-empty");
  score_sum.assign(static_cast<std::size_t>(w) * h, 0.0);
  weight_count.assign(static_cast<std::size_t>(w) * h, 0);
}

double HeatmapCanvas::value(int x, int y) const {
  const std::size_t i = static_cast<std::size_t>(y) * width + x;
  return weight_count[i] == 0 ? std::numeric_limits<double>::quiet_NaN()
                              : score_sum[i] / weight_count[i];
}

void HeatmapCanvas::merge(const HeatmapCanvas& other) {
  require(other.width == width && other.height == height, ErrorCode::dim_mismatch,
          "cannot merge heatmap canvases of different sizes");
  for (std::size_t i = 0; i < score_sum.size(); ++i) {
    score_sum[i] += other.score_sum[i];
    weight_count[i] += other.weight_count[i];
  }
}

void heatmap_accumulate(HeatmapCanvas& canvas, const PatchCoord& coord, double score,
                        int patch_size) {
  require(patch_size >= 1 && coord.x >= 0 && coord.y >= 0 &&
              coord.x + patch_size <= canvas.width && coord.y + patch_size <= canvas.height,
          ErrorCode::invalid_input, "heatmap patch window outside the canvas");
  require(std::isfinite(score), ErrorCode::invalid_input, "heatmap score must be finite");
  for (int y = coord.y; y < coord.y + patch_size; ++y) {
    const std::size_t row = static_cast<std::size_t>(y) * canvas.width;
    for (int x = coord.x; x < coord.x + patch_size; ++x) {
      canvas.score_sum[row + x] += score;
      canvas.weight_count[row + x] += 1;
    }
  }
}

std::array<double, 3> Colormap::interpolate(double v) const {
  v = std::clamp(v, 0.0, 1.0);
  std::size_t i = 1;
  while (i + 1 < stops.size() && stops[i].position < v) ++i;
  const auto& lo = stops[i - 1];
  const auto& hi = stops[i];
  const double t = hi.position > lo.position ? (v - lo.position) / (hi.position - lo.position) : 0.0;
  std::array<double, 3> out{};
  for (int c = 0; c < 3; ++c) out[c] = lo.rgb[c] + t * (hi.rgb[c] - lo.rgb[c]);
  return out;
}

const Colormap& colormap_by_name(const std::string& name) {
  static const Colormap anomaly{"anomaly", {{0.0, {40, 80, 200}}, {1.0, {240, 40, 20}}}};
  static const Colormap gray{"gray", {{0.0, {0, 0, 0}}, {1.0, {255, 255, 255}}}};
  if (name == "anomaly") return anomaly;
  if (name == "gray") return gray;
  fail(ErrorCode::config, "unknown colormap '" + name + "' (expected anomaly|gray)");
}

HeatmapImage heatmap_render(const HeatmapCanvas& canvas, const Colormap& colormap) {
  HeatmapImage img;
  img.width = canvas.width;
  img.height = canvas.height;
  const std::size_t n = canvas.score_sum.size();
  img.rgba.assign(n * 4, 0);
  img.grid.assign(n, std::numeric_limits<float>::quiet_NaN());
  for (std::size_t i = 0; i < n; ++i) {
    if (canvas.weight_count[i] == 0) continue;
    const double v = canvas.score_sum[i] / canvas.weight_count[i];
    img.grid[i] = static_cast<float>(v);
    const auto rgb = colormap.interpolate(v);
    for (int c = 0; c < 3; ++c)
      img.rgba[4 * i + c] = static_cast<std::uint8_t>(std::lround(rgb[c]));
    img.rgba[4 * i + 3] = 255;
  }
  return img;
}

FeatureMatrix heatmap_grid_features(const HeatmapImage& image, const std::string& slide_id) {
  FeatureMatrix m(1);
  m.rows.resize(static_cast<Eigen::Index>(image.grid.size()), 1);
  m.meta.reserve(image.grid.size());
  for (std::size_t i = 0; i < image.grid.size(); ++i) {
    m.rows(static_cast<Eigen::Index>(i), 0) = image.grid[i];
    m.meta.push_back({{slide_id, static_cast<int>(i % image.width),
                       static_cast<int>(i / image.width)},
                      TissueClass::eval,
                      Label::unknown});
  }
  return m;
}

}  // namespace histoad
