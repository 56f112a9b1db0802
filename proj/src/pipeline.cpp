#include "histoad/pipeline.hpp"

#include <cstdio>
#include <json.hpp>
#include <map>
#include <sstream>
#include <thread>
#include <tuple>

#include "histoad/error.hpp"
#include "histoad/rng.hpp"

namespace histoad {

namespace {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads with static chunks.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk, e = std::min(n, b + chunk);
    if (b < e)
      pool.emplace_back([=] {
        for (std::size_t i = b; i < e; ++i) fn(i);
      });
  }
  for (auto& t : pool) t.join();
}

FeatureMatrix embed_rows(const MlpParams& params, const FeatureMatrix& rows) {
  FeatureMatrix out(params.output_dim());
  out.rows.resize(rows.rows.rows(), params.output_dim());
  out.meta = rows.meta;
  for (Eigen::Index i = 0; i < rows.rows.rows(); ++i)
    out.rows.row(i) =
        forward<double>(params, rows.rows.row(i).cast<double>().transpose()).cast<float>().transpose();
  return out;
}

}  // namespace

std::vector<SlideFeatures> load_dataset(const std::vector<ManifestEntry>& manifest) {
  std::map<std::string, FeatureMatrix> cache;
  std::vector<SlideFeatures> slides;
  std::optional<int> dim;
  for (const auto& entry : manifest) {
    auto it = cache.find(entry.path);
    if (it == cache.end()) it = cache.emplace(entry.path, read_features(entry.path, dim)).first;
    const FeatureMatrix& file = it->second;
    dim = file.dim();
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < file.size(); ++i)
      if (file.meta[i].coord.slide_id == entry.slide_id) idx.push_back(i);
    SlideFeatures slide{entry, FeatureMatrix(file.dim())};
    if (idx.empty()) {
      slide.features = file;
      for (auto& m : slide.features.meta) m.coord.slide_id = entry.slide_id;
    } else {
      slide.features = file.select(idx);
    }
    for (auto& m : slide.features.meta) m.tissue_class = entry.tissue_class;
    slides.push_back(std::move(slide));
  }
  return slides;
}

FeatureMatrix pool_of(const std::vector<SlideFeatures>& slides, TissueClass tissue_class) {
  FeatureMatrix out;
  for (const auto& s : slides)
    if (s.entry.tissue_class == tissue_class) {
      if (out.rows.cols() == 0) out = FeatureMatrix(s.features.dim());
      out.append(s.features);
    }
  return out;
}

// --- scorer -----------------------------------------------------------------------

Scorer Scorer::from_model(AnomalyModel model) {
  Scorer s;
  s.kind = ScorerKind::model;
  s.model = std::move(model);
  return s;
}

Scorer Scorer::from_reference(FeatureMatrix reference, KnnConfig knn) {
  Scorer s;
  s.kind = ScorerKind::knn;
  s.reference = std::move(reference);
  s.knn = knn;
  return s;
}

Scorer Scorer::embedded(AnomalyModel model, const FeatureMatrix& reference, KnnConfig knn) {
  Scorer s;
  s.kind = ScorerKind::embedded_knn;
  s.reference = embed_rows(model.params, reference);
  s.model = std::move(model);
  s.knn = knn;
  return s;
}

std::vector<double> Scorer::score_rows(const FeatureMatrix& rows, int jobs) const {
  switch (kind) {
    case ScorerKind::knn:
      return knn_scores(rows, reference, knn, jobs);
    case ScorerKind::embedded_knn:
      return knn_scores(embed_rows(model->params, rows), reference, knn, jobs);
    case ScorerKind::model: {
      require(model.has_value(), ErrorCode::invalid_input, "scorer has no model");
      std::vector<double> out(rows.size());
      parallel_for(rows.size(), jobs, [&](std::size_t i) {
        out[i] = anomaly_score(*model,
                               rows.rows.row(static_cast<Eigen::Index>(i)).cast<double>().transpose());
      });
      return out;
    }
  }
  return {};
}

ScoreTable score_patches(const Scorer& scorer, const FeatureMatrix& rows, int jobs) {
  const auto scores = scorer.score_rows(rows, jobs);
  std::map<std::tuple<std::string, int, int>, std::size_t> slot;
  std::vector<PatchCoord> keys;
  std::vector<std::vector<double>> views;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& c = rows.meta[i].coord;
    auto [it, inserted] = slot.try_emplace({c.slide_id, c.x, c.y}, keys.size());
    if (inserted) {
      keys.push_back(c);
      views.emplace_back();
    }
    views[it->second].push_back(scores[i]);
  }
  ScoreTable table;
  table.rows.reserve(keys.size());
  for (std::size_t k = 0; k < keys.size(); ++k) table.rows.push_back({keys[k], tta_score(views[k])});
  return table;
}

OePools prepare_oe(const FeatureMatrix& normal, const FeatureMatrix& near_oe,
                   const FeatureMatrix& far_oe, const OeFilterConfig& filter) {
  return {dedup_oe(near_oe, normal, filter), dedup_oe(far_oe, normal, filter)};
}

Scorer fit_scorer(const PipelineConfig& config, Objective objective, ScorerKind kind,
                  const FeatureMatrix& normal, const FeatureMatrix& near_oe,
                  const FeatureMatrix& far_oe, std::uint64_t seed,
                  std::vector<double>* loss_trace) {
  if (kind == ScorerKind::knn) return Scorer::from_reference(normal, config.knn);
  TrainConfig tc = config.train_config(objective);
  tc.seed = seed;
  TrainResult result;
  if (uses_outlier_exposure(objective)) {
    const auto oe = prepare_oe(normal, near_oe, far_oe, config.oe_filter);
    result = train({&normal, &oe.near_oe, &oe.far_oe}, tc);
  } else {
    result = train({&normal, nullptr, nullptr}, tc);
  }
  if (loss_trace) *loss_trace = result.loss_trace;
  if (kind == ScorerKind::embedded_knn)
    return Scorer::embedded(std::move(result.model), normal, config.knn);
  return Scorer::from_model(std::move(result.model));
}

// --- evaluation --------------------------------------------------------------------

namespace {

FoldResult evaluate_fold(int fold, const std::vector<SlideScore>& slide_scores,
                         const std::vector<const ManifestEntry*>& entries,
                         const LabeledScores* patches, const std::vector<double>& targets) {
  FoldResult r;
  r.fold = fold;
  r.slide_scores = slide_scores;
  LabeledScores data;
  for (std::size_t i = 0; i < slide_scores.size(); ++i)
    data.push(slide_scores[i].score, entries[i]->label == Label::anomalous,
              entries[i]->label == Label::anomalous ? entries[i]->diagnosis_group : std::string{});
  r.slide_auroc = auroc(data);
  r.groups = group_report(data);
  for (double t : targets) r.thresholds.push_back(sensitivity_threshold(data, t));
  if (patches && patches->count_anomalous() > 0 &&
      patches->count_anomalous() < patches->size())
    r.patch_auroc = auroc(*patches);
  return r;
}

void summarize(EvalReport& report, const std::vector<double>& targets) {
  std::vector<double> slide, patch;
  std::map<std::string, std::vector<double>> groups;
  std::vector<std::vector<double>> fractions(targets.size());
  for (const auto& f : report.fold_results) {
    slide.push_back(f.slide_auroc);
    if (f.patch_auroc) patch.push_back(*f.patch_auroc);
    for (const auto& g : f.groups.groups) groups[g.group].push_back(g.auroc);
    for (std::size_t t = 0; t < targets.size(); ++t)
      fractions[t].push_back(f.thresholds[t].automatable_fraction);
    for (const auto& w : f.groups.warnings)
      if (std::find(report.warnings.begin(), report.warnings.end(), w) == report.warnings.end())
        report.warnings.push_back(w);
  }
  report.folds = static_cast<int>(report.fold_results.size());
  report.slide_auroc = mean_std(slide);
  if (patch.size() == report.fold_results.size() && !patch.empty())
    report.patch_auroc = mean_std(patch);
  for (const auto& [g, v] : groups) report.group_auroc.emplace_back(g, mean_std(v));
  for (std::size_t t = 0; t < targets.size(); ++t)
    report.automatable_fraction.emplace_back(targets[t], mean_std(fractions[t]));
}

}  // namespace

EvalReport run_crossval(const std::vector<SlideFeatures>& slides, const PipelineConfig& config,
                        Objective objective, ScorerKind kind, std::uint64_t seed) {
  config.validate();
  std::vector<std::string> normal_ids;
  std::vector<const SlideFeatures*> always_test;
  for (const auto& s : slides) {
    if (s.entry.tissue_class == TissueClass::normal_target)
      normal_ids.push_back(s.entry.slide_id);
    else if (s.entry.tissue_class == TissueClass::eval)
      always_test.push_back(&s);
  }
  const FoldPlan plan = make_folds(normal_ids, config.eval.folds, seed);
  const FeatureMatrix near_oe = pool_of(slides, TissueClass::near_oe);
  const FeatureMatrix far_oe = pool_of(slides, TissueClass::far_oe);

  EvalReport report;
  report.method = kind == ScorerKind::knn ? std::string("knn")
                                          : std::string(to_string(objective)) +
                                                (kind == ScorerKind::embedded_knn ? "+knn" : "");
  report.seed = seed;
  for (int fold = 0; fold < plan.k; ++fold) {
    FeatureMatrix train_normal;
    std::vector<const SlideFeatures*> test;
    for (const auto& s : slides) {
      if (s.entry.tissue_class != TissueClass::normal_target) continue;
      if (plan.fold_of(s.entry.slide_id) == fold) {
        test.push_back(&s);
      } else {
        if (train_normal.rows.cols() == 0) train_normal = FeatureMatrix(s.features.dim());
        train_normal.append(s.features);
      }
    }
    test.insert(test.end(), always_test.begin(), always_test.end());
    const Scorer scorer =
        fit_scorer(config, objective, kind, train_normal, near_oe, far_oe,
                   CounterRng::mix(seed + static_cast<std::uint64_t>(fold) + 1));

    std::vector<SlideScore> slide_scores;
    std::vector<const ManifestEntry*> entries;
    LabeledScores patches;
    for (const auto* s : test) {
      const ScoreTable table = score_patches(scorer, s->features, config.jobs);
      slide_scores.push_back({s->entry.slide_id, aggregate_slide(table.rows, config.aggregation)});
      entries.push_back(&s->entry);
      // Patch labels: first row of each key carries the label.
      std::map<std::tuple<std::string, int, int>, Label> label_of;
      for (const auto& m : s->features.meta)
        label_of.try_emplace({m.coord.slide_id, m.coord.x, m.coord.y}, m.label);
      for (const auto& row : table.rows) {
        Label l = s->entry.tissue_class == TissueClass::normal_target
                      ? Label::normal
                      : label_of[{row.coord.slide_id, row.coord.x, row.coord.y}];
        if (l != Label::unknown) patches.push(row.score, l == Label::anomalous);
      }
    }
    report.fold_results.push_back(
        evaluate_fold(fold, slide_scores, entries, &patches, config.eval.sensitivity_targets));
  }
  summarize(report, config.eval.sensitivity_targets);
  return report;
}

EvalReport evaluate_slide_scores(const std::vector<SlideScore>& scores,
                                 const std::vector<ManifestEntry>& manifest,
                                 const std::vector<double>& targets) {
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : manifest) by_id[e.slide_id] = &e;
  std::vector<SlideScore> kept;
  std::vector<const ManifestEntry*> entries;
  EvalReport report;
  report.method = "slide-scores";
  for (const auto& s : scores) {
    auto it = by_id.find(s.slide_id);
    if (it == by_id.end() || it->second->label == Label::unknown) {
      report.warnings.push_back("slide '" + s.slide_id + "' has no label; skipped");
      continue;
    }
    kept.push_back(s);
    entries.push_back(it->second);
  }
  report.fold_results.push_back(evaluate_fold(0, kept, entries, nullptr, targets));
  summarize(report, targets);
  return report;
}

// --- reporting ----------------------------------------------------------------------

namespace {

nlohmann::ordered_json ms_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * v);
  return buf;
}

}  // namespace

std::string report_to_json(const EvalReport& r) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["folds"] = r.folds;
  j["slide_auroc"] = ms_json(r.slide_auroc);
  j["fold_slide_auroc"] = ordered_json::array();
  for (const auto& f : r.fold_results) j["fold_slide_auroc"].push_back(f.slide_auroc);
  if (r.patch_auroc) {
    j["patch_auroc"] = ms_json(*r.patch_auroc);
    j["fold_patch_auroc"] = ordered_json::array();
    for (const auto& f : r.fold_results) j["fold_patch_auroc"].push_back(*f.patch_auroc);
  }
  j["groups"] = ordered_json::array();
  for (const auto& [g, m] : r.group_auroc) {
    ordered_json item{{"group", g}, {"auroc", ms_json(m)}};
    j["groups"].push_back(item);
  }
  j["sensitivity"] = ordered_json::array();
  for (std::size_t t = 0; t < r.automatable_fraction.size(); ++t) {
    ordered_json item;
    item["target"] = r.automatable_fraction[t].first;
    item["automatable_fraction"] = ms_json(r.automatable_fraction[t].second);
    item["fold_thresholds"] = ordered_json::array();
    for (const auto& f : r.fold_results) item["fold_thresholds"].push_back(f.thresholds[t].threshold);
    j["sensitivity"].push_back(item);
  }
  j["fold_slide_scores"] = ordered_json::array();
  for (const auto& f : r.fold_results) {
    ordered_json scores = ordered_json::object();
    for (const auto& s : f.slide_scores) scores[s.slide_id] = s.score;
    j["fold_slide_scores"].push_back(scores);
  }
  j["warnings"] = r.warnings;
  return j.dump(2) + "\n";
}

std::string report_to_table(const EvalReport& r) {
  std::ostringstream out;
  out << "method: " << r.method << "  folds: " << r.folds << "  seed: " << r.seed << '\n';
  out << "slide-AUROC  " << pct(r.slide_auroc.mean) << " +- " << pct(r.slide_auroc.std) << '\n';
  if (r.patch_auroc)
    out << "patch-AUROC  " << pct(r.patch_auroc->mean) << " +- " << pct(r.patch_auroc->std) << '\n';
  for (const auto& [g, m] : r.group_auroc)
    out << "  group " << (g.empty() ? "(none)" : g) << "  " << pct(m.mean) << " +- "
        << pct(m.std) << '\n';
  for (const auto& [t, m] : r.automatable_fraction)
    out << "  sensitivity " << pct(t) << "%  automatable " << pct(m.mean) << "% +- "
        << pct(m.std) << '\n';
  for (const auto& w : r.warnings) out << "warning: " << w << '\n';
  return out.str();
}

}  // namespace histoad
