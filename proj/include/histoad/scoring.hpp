#pragma once

#include <Eigen/Dense>
#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "histoad/features.hpp"
#include "histoad/models.hpp"
#include "histoad/tiler.hpp"

namespace histoad {

enum class KnnMode {
  mean_of_k,  // mean of the k smallest distances (default)
  kth,        // distance to the k-th neighbour
};

struct KnnConfig {
  int k = 5;
  KnnMode mode = KnnMode::mean_of_k;
};

const char* to_string(KnnMode m);
KnnMode parse_knn_mode(const std::string& s);

/// Euclidean kNN distance score of `query` against `reference` rows.
double knn_score(const Eigen::Ref<const Eigen::VectorXd>& query,
                 const FeatureMatrix& reference, const KnnConfig& config = {});

/// knn_score for every row of `queries`, split over up to `jobs` threads.
std::vector<double> knn_scores(const FeatureMatrix& queries,
                               const FeatureMatrix& reference,
                               const KnnConfig& config = {}, int jobs = 1);

/// sigmoid(forward(params, x)) for a width-1 classifier head.
double classifier_score(const MlpParams& params, const Eigen::Ref<const Eigen::VectorXd>& x);

struct TtaConfig {
  int n_views = 10;
};

/// Arithmetic mean of per-view scores.
double tta_score(std::span<const double> view_scores);

struct ScoreRow {
  PatchCoord coord;
  double score = 0.0;
};

/// Patch scores keyed by (slide, x, y).
struct ScoreTable {
  std::vector<ScoreRow> rows;

  /// Slide ids in first-appearance order mapped to their row indices.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> by_slide() const;
  /// Finite scores and unique keys, else invalid_input.
  void validate() const;
};

/// `slide_id,x,y,score`, 9 significant digits.
void write_score_csv(const std::string& path, const ScoreTable& table);
ScoreTable read_score_csv(const std::string& path);

struct AggregationConfig {
  double top_fraction = 0.10;
  void validate() const;
};

/// Number of patches averaged for a slide of n patches: max(1, ceil(f * n)).
std::size_t top_count(std::size_t n, double top_fraction);

/// Mean of the m highest patch scores, m = top_count(n, f). Candidates are
/// ordered by (score desc, x, y) and summed in that order.
double aggregate_slide(std::span<const ScoreRow> rows, const AggregationConfig& config = {});

struct SlideScore {
  std::string slide_id;
  double score = 0.0;
};
std::vector<SlideScore> aggregate_all(const ScoreTable& table,
                                      const AggregationConfig& config = {});
void write_slide_score_csv(const std::string& path, const std::vector<SlideScore>& scores);
std::vector<SlideScore> read_slide_score_csv(const std::string& path);

/// Per-pixel running sums of overlapping patch scores.
struct HeatmapCanvas {
  int width = 0;
  int height = 0;
  std::vector<double> score_sum;
  std::vector<std::uint32_t> weight_count;

  HeatmapCanvas() = default;
  HeatmapCanvas(int w, int h);

  /// Averaged value at (x, y); NaN where no patch contributed.
  double value(int x, int y) const;
  /// Element-wise sum of two canvases of equal size.
  void merge(const HeatmapCanvas& other);
};

void heatmap_accumulate(HeatmapCanvas& canvas, const PatchCoord& coord, double score,
                        int patch_size);

struct ColorStop {
  double position;
  std::array<std::uint8_t, 3> rgb;
};

/// Piecewise-linear colormap over [0, 1]; values outside are clamped.
struct Colormap {
  std::string name;
  std::vector<ColorStop> stops;

  std::array<double, 3> interpolate(double v) const;
};

/// "anomaly": (40,80,200) at 0 -> (240,40,20) at 1.
/// "gray": black -> white.
const Colormap& colormap_by_name(const std::string& name);

struct HeatmapImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgba;  // uncovered pixels fully transparent
  std::vector<float> grid;         // averaged values, NaN where uncovered
};

HeatmapImage heatmap_render(const HeatmapCanvas& canvas, const Colormap& colormap);

/// Raw grid as a feature file with D = 1, one row per pixel in raster order.
FeatureMatrix heatmap_grid_features(const HeatmapImage& image, const std::string& slide_id);

}  // namespace histoad
