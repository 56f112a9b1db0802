#include "histoad/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "histoad/error.hpp"
#include "histoad/rng.hpp"

namespace histoad {

std::size_t LabeledScores::count_anomalous() const {
  return static_cast<std::size_t>(std::count(anomalous.begin(), anomalous.end(), true));
}

void LabeledScores::validate() const {
  require(anomalous.size() == score.size() && (group.empty() || group.size() == score.size()),
          ErrorCode::invalid_input, "labeled scores: parallel arrays differ in length");
  for (double s : score)
    require(!std::isnan(s), ErrorCode::invalid_input, "labeled scores: NaN score");
}

double mann_whitney_u(const LabeledScores& data) {
  data.validate();
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return data.score[a] < data.score[b]; });
  // Ranks are 1-based; a tie block spanning sorted positions [i, j) shares
  // the average rank (i + 1 + j) / 2.
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && data.score[order[j]] == data.score[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (data.anomalous[order[t]]) rank_sum += avg_rank;
    i = j;
  }
  const double n1 = static_cast<double>(data.count_anomalous());
  return rank_sum - n1 * (n1 + 1.0) / 2.0;
}

double auroc(const LabeledScores& data) {
  const std::size_t n1 = data.count_anomalous();
  const std::size_t n0 = data.size() - n1;
  require(n1 > 0 && n0 > 0, ErrorCode::single_class,
          "auroc: single-class input (" + std::to_string(n1) + " anomalous, " +
              std::to_string(n0) + " normal)");
  return mann_whitney_u(data) / (static_cast<double>(n1) * static_cast<double>(n0));
}

// --- annotations ---------------------------------------------------------------

const char* to_string(AnnotationKind k) {
  switch (k) {
    case AnnotationKind::diagnosis_defining: return "diagnosis_defining";
    case AnnotationKind::other_anomalous: return "other_anomalous";
    case AnnotationKind::artifact: return "artifact";
  }
  return "diagnosis_defining";
}

AnnotationKind parse_annotation_kind(const std::string& s) {
  if (s == "diagnosis_defining") return AnnotationKind::diagnosis_defining;
  if (s == "other_anomalous") return AnnotationKind::other_anomalous;
  if (s == "artifact") return AnnotationKind::artifact;
  fail(ErrorCode::invalid_input, "unknown annotation kind '" + s + "'");
}

namespace {

std::vector<Point2> open_ring(const std::vector<Point2>& polygon) {
  std::vector<Point2> ring = polygon;
  if (ring.size() >= 2 && ring.front().x == ring.back().x && ring.front().y == ring.back().y)
    ring.pop_back();
  return ring;
}

bool on_segment(const Point2& p, const Point2& a, const Point2& b) {
  const double cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
  if (cross != 0.0) return false;
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
         std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

}  // namespace

void validate_polygon(const std::vector<Point2>& polygon) {
  const auto ring = open_ring(polygon);
  require(ring.size() >= 3, ErrorCode::invalid_input,
          "degenerate polygon: fewer than three vertices");
  double twice_area = 0.0;
  for (std::size_t i = 0; i < ring.size(); ++i) {
    const auto& a = ring[i];
    const auto& b = ring[(i + 1) % ring.size()];
    twice_area += a.x * b.y - b.x * a.y;
  }
  require(twice_area != 0.0, ErrorCode::invalid_input, "degenerate polygon: zero area");
}

bool point_in_polygon(const Point2& p, const std::vector<Point2>& polygon) {
  const auto ring = open_ring(polygon);
  bool inside = false;
  for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
    const auto& a = ring[i];
    const auto& b = ring[j];
    if (on_segment(p, a, b)) return true;
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

std::vector<Annotation> parse_annotations(const std::string& json_text) {
  std::vector<Annotation> out;
  try {
    const auto j = nlohmann::json::parse(json_text);
    require(j.is_array(), ErrorCode::invalid_input, "annotations: expected a JSON array");
    for (const auto& item : j) {
      Annotation a;
      a.kind = parse_annotation_kind(item.at("kind").get<std::string>());
      for (const auto& pt : item.at("polygon"))
        a.polygon.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
      validate_polygon(a.polygon);
      out.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_input, std::string("annotations: ") + e.what());
  }
  return out;
}

std::vector<Annotation> read_annotations(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot read annotations " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_annotations(ss.str());
}

std::string annotations_to_json(const std::vector<Annotation>& annotations) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& a : annotations) {
    nlohmann::ordered_json item;
    item["kind"] = to_string(a.kind);
    auto poly = nlohmann::ordered_json::array();
    for (const auto& p : a.polygon) poly.push_back({p.x, p.y});
    item["polygon"] = poly;
    arr.push_back(item);
  }
  return arr.dump(2);
}

PatchLabeling patch_labels_from_annotations(const std::vector<PatchCoord>& coords,
                                            const std::vector<Annotation>& regions,
                                            int patch_size) {
  require(patch_size >= 1, ErrorCode::invalid_input, "patch_size must be >= 1");
  for (const auto& r : regions) validate_polygon(r.polygon);
  PatchLabeling out;
  out.labels.reserve(coords.size());
  out.artifact.reserve(coords.size());
  const double half = patch_size / 2.0;
  for (const auto& c : coords) {
    const Point2 center{c.x + half, c.y + half};
    bool defining = false, other = false, artifact = false;
    for (const auto& r : regions) {
      if (!point_in_polygon(center, r.polygon)) continue;
      switch (r.kind) {
        case AnnotationKind::diagnosis_defining: defining = true; break;
        case AnnotationKind::other_anomalous: other = true; break;
        case AnnotationKind::artifact: artifact = true; break;
      }
    }
    out.labels.push_back(defining ? PatchLabel::anomalous
                                  : (other ? PatchLabel::excluded : PatchLabel::normal));
    out.artifact.push_back(artifact);
  }
  return out;
}

// --- folds ------------------------------------------------------------------------

std::vector<std::string> FoldPlan::fold_members(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignments)
    if (f == fold) out.push_back(id);
  return out;
}

int FoldPlan::fold_of(const std::string& slide_id) const {
  for (const auto& [id, f] : assignments)
    if (id == slide_id) return f;
  return -1;
}

FoldPlan make_folds(const std::vector<std::string>& normal_slide_ids, int k,
                    std::uint64_t seed) {
  require(k >= 2, ErrorCode::config, "make_folds: k must be >= 2");
  require(normal_slide_ids.size() >= static_cast<std::size_t>(k), ErrorCode::invalid_input,
          "make_folds: " + std::to_string(normal_slide_ids.size()) +
              " normal slides are too few for " + std::to_string(k) + " folds");
  {
    std::set<std::string> seen;
    for (const auto& id : normal_slide_ids)
      require(seen.insert(id).second, ErrorCode::invalid_input,
              "make_folds: duplicate slide id '" + id + "'");
  }
  std::vector<std::size_t> perm(normal_slide_ids.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  CounterRng rng(seed);
  for (std::size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
  std::vector<int> fold(normal_slide_ids.size());
  for (std::size_t pos = 0; pos < perm.size(); ++pos)
    fold[perm[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  for (std::size_t i = 0; i < normal_slide_ids.size(); ++i)
    plan.assignments.emplace_back(normal_slide_ids[i], fold[i]);
  return plan;
}

// --- thresholds ---------------------------------------------------------------------

SensitivityThreshold sensitivity_threshold(const LabeledScores& data, double target) {
  data.validate();
  require(target > 0.0 && target <= 1.0, ErrorCode::config,
          "target sensitivity must lie in (0, 1]");
  std::vector<double> anom, norm;
  for (std::size_t i = 0; i < data.size(); ++i)
    (data.anomalous[i] ? anom : norm).push_back(data.score[i]);
  require(!anom.empty() && !norm.empty(), ErrorCode::single_class,
          "sensitivity_threshold: both classes are required");
  std::sort(anom.begin(), anom.end(), std::greater<>());
  const double n_anom = static_cast<double>(anom.size());
  // Smallest number of top anomalous scores that reaches the target.
  std::size_t m = 1;
  while (m < anom.size() && static_cast<double>(m) / n_anom < target) ++m;
  SensitivityThreshold out;
  out.target = target;
  out.threshold = anom[m - 1];
  const auto below = std::count_if(norm.begin(), norm.end(),
                                   [&](double s) { return s < out.threshold; });
  out.automatable_fraction = static_cast<double>(below) / static_cast<double>(norm.size());
  return out;
}

GroupReport group_report(const LabeledScores& data) {
  data.validate();
  auto group_of = [&](std::size_t i) {
    return data.group.empty() ? std::string{} : data.group[i];
  };
  std::map<std::string, std::size_t> anomalous_per_group;
  std::vector<std::string> normal_only_groups;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.anomalous[i])
      ++anomalous_per_group[group_of(i)];
    else if (!group_of(i).empty())
      normal_only_groups.push_back(group_of(i));
  }
  GroupReport report;
  for (const auto& g : normal_only_groups)
    if (!anomalous_per_group.contains(g) &&
        std::find(report.warnings.begin(), report.warnings.end(),
                  "group '" + g + "' has no anomalous samples; skipped") ==
            report.warnings.end())
      report.warnings.push_back("group '" + g + "' has no anomalous samples; skipped");
  for (const auto& [g, n_anom] : anomalous_per_group) {
    LabeledScores subset;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (!data.anomalous[i] || group_of(i) == g) subset.push(data.score[i], data.anomalous[i]);
    if (subset.count_anomalous() == subset.size()) {
      report.warnings.push_back("group '" + g + "' has no normal reference; skipped");
      continue;
    }
    report.groups.push_back({g, auroc(subset), n_anom});
  }
  return report;
}

MeanStd mean_std(const std::vector<double>& values) {
  require(!values.empty(), ErrorCode::invalid_input, "mean_std: no values");
  MeanStd out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(values.size()));
  return out;
}

}  // namespace histoad
