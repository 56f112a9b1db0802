#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "histoad/error.hpp"
#include "histoad/tiler.hpp"

namespace histoad {

/// Parallel arrays of scores, binary labels (true = anomalous) and optional
/// diagnosis-group tags (empty vector or empty strings when absent).
struct LabeledScores {
  std::vector<double> score;
  std::vector<bool> anomalous;
  std::vector<std::string> group;

  void push(double s, bool is_anomalous, std::string g = {}) {
    score.push_back(s);
    anomalous.push_back(is_anomalous);
    group.push_back(std::move(g));
  }
  std::size_t size() const { return score.size(); }
  std::size_t count_anomalous() const;
  void validate() const;
};

/// Mann-Whitney U of the anomalous class with average ranks for ties:
/// #{(a, n): s_a > s_n} + 0.5 #{s_a == s_n}.
double mann_whitney_u(const LabeledScores& data);

/// U / (n_anomalous * n_normal). single_class error when a class is missing.
double auroc(const LabeledScores& data);

// --- patch ground truth ----------------------------------------------------------

enum class AnnotationKind { diagnosis_defining, other_anomalous, artifact };
const char* to_string(AnnotationKind k);
AnnotationKind parse_annotation_kind(const std::string& s);

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct Annotation {
  AnnotationKind kind = AnnotationKind::diagnosis_defining;
  std::vector<Point2> polygon;  // closing vertex optional
};

/// Throws invalid_input for polygons with fewer than three distinct
/// vertices or zero area.
void validate_polygon(const std::vector<Point2>& polygon);

/// Even-odd containment; points on an edge or vertex count as inside.
bool point_in_polygon(const Point2& p, const std::vector<Point2>& polygon);

/// JSON: [{"kind": "...", "polygon": [[x, y], ...]}, ...]
std::vector<Annotation> parse_annotations(const std::string& json_text);
std::vector<Annotation> read_annotations(const std::string& path);
std::string annotations_to_json(const std::vector<Annotation>& annotations);

enum class PatchLabel { normal, anomalous, excluded };

struct PatchLabeling {
  std::vector<PatchLabel> labels;
  /// Separate stream: patch center inside an artifact region.
  std::vector<bool> artifact;
};

/// Labels from patch centers: inside a diagnosis-defining region ->
/// anomalous; else inside an other-anomalous region -> excluded; else normal.
PatchLabeling patch_labels_from_annotations(const std::vector<PatchCoord>& coords,
                                            const std::vector<Annotation>& regions,
                                            int patch_size);

// --- cross-validation ------------------------------------------------------------

struct FoldPlan {
  int k = 5;
  std::uint64_t seed = 0;
  /// (slide id, fold) in input order.
  std::vector<std::pair<std::string, int>> assignments;

  std::vector<std::string> fold_members(int fold) const;
  int fold_of(const std::string& slide_id) const;
};

/// Seeded shuffle, then round-robin assignment.
FoldPlan make_folds(const std::vector<std::string>& normal_slide_ids, int k,
                    std::uint64_t seed);

// --- thresholds and reports --------------------------------------------------------

struct SensitivityThreshold {
  double target = 1.0;
  double threshold = 0.0;
  double automatable_fraction = 0.0;
};

/// Largest t with #{anomalous >= t} / N_anom >= target; the automatable
/// fraction is #{normal < t} / N_norm.
SensitivityThreshold sensitivity_threshold(const LabeledScores& data, double target);

struct GroupAuroc {
  std::string group;
  double auroc = 0.0;
  std::size_t n_anomalous = 0;
};

struct GroupReport {
  std::vector<GroupAuroc> groups;     // sorted by group name
  std::vector<std::string> warnings;  // groups skipped
};

/// Per group g: AUROC over all normals plus the anomalous samples tagged g.
/// Anomalous samples without a group tag form the group "".
GroupReport group_report(const LabeledScores& data);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};
MeanStd mean_std(const std::vector<double>& values);

inline constexpr std::array<double, 3> kDefaultSensitivityTargets = {1.00, 0.99, 0.95};

}  // namespace histoad
