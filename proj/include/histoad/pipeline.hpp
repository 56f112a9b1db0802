#pragma once

#include <optional>
#include <string>
#include <vector>

#include "histoad/config.hpp"
#include "histoad/eval.hpp"
#include "histoad/features.hpp"
#include "histoad/models.hpp"
#include "histoad/scoring.hpp"

namespace histoad {

struct SlideFeatures {
  ManifestEntry entry;
  FeatureMatrix features;
};

/// Loads every manifest entry's feature file, keeping only rows whose
/// slide_id matches the entry (files may hold several slides).
std::vector<SlideFeatures> load_dataset(const std::vector<ManifestEntry>& manifest);

/// Concatenation of the slides with the given tissue class.
FeatureMatrix pool_of(const std::vector<SlideFeatures>& slides, TissueClass tissue_class);

/// A ready-to-use patch scorer.
struct Scorer {
  ScorerKind kind = ScorerKind::model;
  std::optional<AnomalyModel> model;
  FeatureMatrix reference;  // raw or embedded, per kind
  KnnConfig knn;

  static Scorer from_model(AnomalyModel model);
  static Scorer from_reference(FeatureMatrix reference, KnnConfig knn);
  /// kNN in the head's embedding space (reference rows are embedded once).
  static Scorer embedded(AnomalyModel model, const FeatureMatrix& reference, KnnConfig knn);

  std::vector<double> score_rows(const FeatureMatrix& rows, int jobs = 1) const;
};

/// Scores every row, then averages rows sharing a (slide, x, y) key: extra
/// rows for one patch are its augmented views. Output keeps first-appearance
/// order.
ScoreTable score_patches(const Scorer& scorer, const FeatureMatrix& rows, int jobs = 1);

/// OE pools after cosine deduplication against the normal pool.
struct OePools {
  FeatureMatrix near_oe;
  FeatureMatrix far_oe;
};
OePools prepare_oe(const FeatureMatrix& normal, const FeatureMatrix& near_oe,
                   const FeatureMatrix& far_oe, const OeFilterConfig& filter);

/// Trains (or builds a kNN reference) from the given normal/OE pools.
Scorer fit_scorer(const PipelineConfig& config, Objective objective, ScorerKind kind,
                  const FeatureMatrix& normal, const FeatureMatrix& near_oe,
                  const FeatureMatrix& far_oe, std::uint64_t seed,
                  std::vector<double>* loss_trace = nullptr);

struct FoldResult {
  int fold = 0;
  double slide_auroc = 0.0;
  std::optional<double> patch_auroc;
  GroupReport groups;
  std::vector<SensitivityThreshold> thresholds;
  std::vector<SlideScore> slide_scores;
};

struct EvalReport {
  std::string method;
  std::uint64_t seed = 0;
  int folds = 0;
  std::vector<FoldResult> fold_results;
  MeanStd slide_auroc;
  std::optional<MeanStd> patch_auroc;
  std::vector<std::pair<std::string, MeanStd>> group_auroc;
  std::vector<std::pair<double, MeanStd>> automatable_fraction;
  std::vector<std::string> warnings;
};

/// k-fold protocol over the normal_target slides: each fold trains on the
/// other folds' normal slides (plus all OE slides), then scores its own
/// normal slides and every slide labeled anomalous or tissue class eval.
EvalReport run_crossval(const std::vector<SlideFeatures>& slides, const PipelineConfig& config,
                        Objective objective, ScorerKind kind, std::uint64_t seed);

/// Single evaluation of slide scores against slide labels.
EvalReport evaluate_slide_scores(const std::vector<SlideScore>& scores,
                                 const std::vector<ManifestEntry>& manifest,
                                 const std::vector<double>& targets);

std::string report_to_json(const EvalReport& report);
std::string report_to_table(const EvalReport& report);

}  // namespace histoad
