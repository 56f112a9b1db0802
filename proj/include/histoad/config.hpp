#pragma once

#include <optional>
#include <string>
#include <vector>

#include "histoad/features.hpp"
#include "histoad/models.hpp"
#include "histoad/scoring.hpp"
#include "histoad/stainnorm.hpp"
#include "histoad/tiler.hpp"

namespace histoad {

inline constexpr const char* kConfigEnvVar = "HISTOAD_CONFIG";

struct EvalConfig {
  int folds = 5;
  std::vector<double> sensitivity_targets = {1.00, 0.99, 0.95};
};

enum class ScorerKind {
  model,         // score with the trained head (objective-specific score)
  knn,           // kNN over raw reference features
  embedded_knn,  // kNN over head embeddings of the reference features
};
const char* to_string(ScorerKind k);
ScorerKind parse_scorer_kind(const std::string& s);

/// Everything the CLI needs, with the paper-derived defaults.
struct PipelineConfig {
  TileSpec tile;
  int heatmap_overlap = kHeatmapOverlap;
  TissueDetectConfig tissue;
  std::optional<LabStats> stain_target;
  OeFilterConfig oe_filter;
  Objective objective = Objective::bce;
  ScorerKind scorer = ScorerKind::model;
  TrainConfig train_oe = TrainConfig::outlier_exposure();
  TrainConfig train_occ = TrainConfig::one_class();
  TrainConfig train_ae = TrainConfig::defaults_for(Objective::autoencoder);
  KnnConfig knn;
  AggregationConfig aggregation;
  TtaConfig tta;
  EvalConfig eval;
  std::string colormap = "anomaly";
  int jobs = 1;

  TileSpec heatmap_tile() const {
    return {tile.patch_size, tile.patch_size - heatmap_overlap, tile.max_background_fraction};
  }
  /// Optimizer section for `objective`, with the objective filled in.
  TrainConfig train_config(Objective objective) const;
  void validate() const;
};

/// Missing keys keep their defaults; unknown top-level keys are rejected.
PipelineConfig config_from_json(const std::string& text);
PipelineConfig load_config(const std::string& path);
std::string to_json(const PipelineConfig& config);

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text, TrainConfig base = {});

}  // namespace histoad
