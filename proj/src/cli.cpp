#include "histoad/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "histoad/config.hpp"
#include "histoad/error.hpp"
#include "histoad/image_io.hpp"
#include "histoad/pipeline.hpp"
#include "histoad/stainnorm.hpp"
#include "histoad/synth.hpp"

namespace histoad {

namespace fs = std::filesystem;

namespace {

void log_line(const std::string& msg) { std::cerr << "histoad: " << msg << '\n'; }

void write_text(const std::string& path, const std::string& text) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  require(bool(out), ErrorCode::io, "cannot write " + path);
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorCode::io, "input file not found: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_file(const std::string& path) {
  require(fs::exists(path), ErrorCode::io, "input file not found: " + path);
}

/// Options shared by every subcommand; flags override the config file.
struct Globals {
  std::string config_path;
  std::optional<int> jobs;
};

PipelineConfig resolve_config(const Globals& g) {
  std::string path = g.config_path;
  if (path.empty())
    if (const char* env = std::getenv(kConfigEnvVar)) path = env;
  PipelineConfig config;
  if (!path.empty()) {
    require_file(path);
    config = load_config(path);
  }
  if (g.jobs) config.jobs = *g.jobs;
  return config;
}

/// Optimizer flags shared by train and crossval.
struct TrainFlags {
  std::optional<double> lr, momentum, weight_decay, clip;
  std::optional<int> batch_size, steps;

  void add(CLI::App* app) {
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--momentum", momentum, "SGD momentum");
    app->add_option("--weight-decay", weight_decay, "L2 weight decay");
    app->add_option("--clip", clip, "gradient-norm clip (0 = off)");
    app->add_option("--batch-size", batch_size, "mini-batch size");
    app->add_option("--steps", steps, "optimizer steps");
  }

  void apply(PipelineConfig& config, Objective objective) const {
    TrainConfig* tc = uses_outlier_exposure(objective) ? &config.train_oe
                      : objective == Objective::autoencoder ? &config.train_ae
                                                            : &config.train_occ;
    if (lr) tc->learning_rate = *lr;
    if (momentum) tc->momentum = *momentum;
    if (weight_decay) tc->weight_decay = *weight_decay;
    if (clip) tc->grad_clip_norm = *clip > 0 ? std::optional<double>(*clip) : std::nullopt;
    if (batch_size) tc->batch_size = *batch_size;
    if (steps) tc->steps = *steps;
  }
};

struct KnnFlags {
  std::optional<int> k;
  std::optional<std::string> mode;
  void add(CLI::App* app) {
    app->add_option("--k", k, "neighbours for kNN scoring");
    app->add_option("--knn-mode", mode, "mean_of_k or kth");
  }
  void apply(PipelineConfig& config) const {
    if (k) config.knn.k = *k;
    if (mode) config.knn.mode = parse_knn_mode(*mode);
  }
};

// --- tile -------------------------------------------------------------------------

struct TileArgs {
  std::vector<std::string> slides;
  std::string out_dir = ".";
  std::optional<int> patch_size, stride;
  std::optional<double> max_background;
  bool heatmap_grid = false;
  bool write_patches = false;
};

int cmd_tile(const Globals& g, const TileArgs& a) {
  PipelineConfig config = resolve_config(g);
  if (a.patch_size) config.tile.patch_size = *a.patch_size;
  config.tile.stride = a.stride ? *a.stride : config.tile.patch_size;
  if (a.max_background) config.tile.max_background_fraction = *a.max_background;
  config.validate();
  const TileSpec spec = a.heatmap_grid ? config.heatmap_tile() : config.tile;
  spec.validate();
  for (const auto& path : a.slides) require_file(path);
  fs::create_directories(a.out_dir);
  for (const auto& path : a.slides) {
    const SlideRaster raster = read_raster(path);
    const TissueMask mask = detect_tissue(raster, config.tissue);
    const auto coords = enumerate_patches(mask, spec, raster.id);
    const std::string base = (fs::path(a.out_dir) / raster.id).string();
    write_patch_csv(base + "_patches.csv", coords);
    write_mask_png(base + "_mask.png", mask);
    if (coords.empty())
      log_line("warning: slide '" + raster.id + "' has no tissue patches");
    else
      log_line(raster.id + ": " + std::to_string(coords.size()) + " patches");
    if (a.write_patches) {
      const fs::path dir = fs::path(a.out_dir) / (raster.id + "_patches");
      fs::create_directories(dir);
      for (const auto& c : coords) {
        SlideRaster patch = extract_patch(raster, c, spec.patch_size);
        if (config.stain_target) patch = normalize(patch, *config.stain_target);
        write_png_rgb((dir / (std::to_string(c.x) + "_" + std::to_string(c.y) + ".png")).string(),
                      patch);
      }
    }
  }
  return 0;
}

// --- stain-target -------------------------------------------------------------------

struct StainArgs {
  std::vector<std::string> slides;
  std::string out;
  bool no_mask = false;
};

int cmd_stain_target(const Globals& g, const StainArgs& a) {
  const PipelineConfig config = resolve_config(g);
  for (const auto& path : a.slides) require_file(path);
  std::vector<LabStats> per_slide;
  for (const auto& path : a.slides) {
    const SlideRaster raster = read_raster(path);
    if (a.no_mask) {
      per_slide.push_back(compute_stats(raster));
      continue;
    }
    const TissueMask mask = detect_tissue(raster, config.tissue);
    if (mask.tissue_count() < 2) {
      log_line("warning: slide '" + raster.id + "' has no tissue; skipped");
      continue;
    }
    per_slide.push_back(compute_stats(raster, &mask));
  }
  require(!per_slide.empty(), ErrorCode::invalid_input, "stain-target: no usable slides");
  const std::string json = to_json(pool_stats(per_slide));
  if (a.out.empty())
    std::cout << json;
  else
    write_text(a.out, json);
  return 0;
}

// --- train ----------------------------------------------------------------------

struct TrainArgs {
  std::vector<std::string> manifests;
  std::optional<std::string> objective;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string loss_trace;
  TrainFlags flags;
};

std::vector<ManifestEntry> read_manifests(const std::vector<std::string>& paths) {
  std::vector<ManifestEntry> all;
  for (const auto& p : paths) {
    require_file(p);
    auto m = read_manifest(p);
    all.insert(all.end(), m.begin(), m.end());
  }
  return all;
}

int cmd_train(const Globals& g, const TrainArgs& a) {
  PipelineConfig config = resolve_config(g);
  if (a.objective) config.objective = parse_objective(*a.objective);
  a.flags.apply(config, config.objective);
  config.validate();
  const auto slides = load_dataset(read_manifests(a.manifests));
  const FeatureMatrix normal = pool_of(slides, TissueClass::normal_target);
  require(!normal.empty(), ErrorCode::invalid_input, "train: manifest has no normal_target slides");
  FeatureMatrix near_oe = pool_of(slides, TissueClass::near_oe);
  FeatureMatrix far_oe = pool_of(slides, TissueClass::far_oe);
  TrainConfig tc = config.train_config(config.objective);
  tc.seed = *a.seed;
  TrainResult result;
  if (uses_outlier_exposure(config.objective)) {
    const auto oe = prepare_oe(normal, near_oe, far_oe, config.oe_filter);
    log_line("OE pools after dedup: near " + std::to_string(oe.near_oe.size()) + "/" +
             std::to_string(near_oe.size()) + ", far " + std::to_string(oe.far_oe.size()) + "/" +
             std::to_string(far_oe.size()));
    result = train({&normal, &oe.near_oe, &oe.far_oe}, tc);
  } else {
    result = train({&normal, nullptr, nullptr}, tc);
  }
  save_checkpoint(result.model, a.out);
  if (!a.loss_trace.empty()) {
    std::string csv = "step,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i, result.loss_trace[i]);
      csv += buf;
    }
    write_text(a.loss_trace, csv);
  }
  if (!result.loss_trace.empty()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", result.loss_trace.back());
    log_line("final loss " + std::string(buf));
  }
  return 0;
}

// --- score ----------------------------------------------------------------------

struct ScoreArgs {
  std::string checkpoint;
  std::string reference;
  std::vector<std::string> features;
  std::optional<std::string> scorer;
  std::string out;
  KnnFlags knn;
};

int cmd_score(const Globals& g, const ScoreArgs& a) {
  PipelineConfig config = resolve_config(g);
  a.knn.apply(config);
  ScorerKind kind = config.scorer;
  if (a.scorer) kind = parse_scorer_kind(*a.scorer);
  else if (a.checkpoint.empty()) kind = ScorerKind::knn;
  config.validate();

  Scorer scorer;
  if (kind == ScorerKind::knn) {
    require(!a.reference.empty(), ErrorCode::invalid_input, "score: kNN scoring needs --reference");
    require_file(a.reference);
    scorer = Scorer::from_reference(read_features(a.reference), config.knn);
  } else {
    require(!a.checkpoint.empty(), ErrorCode::invalid_input,
            std::string("score: scorer '") + to_string(kind) + "' needs --checkpoint");
    require_file(a.checkpoint);
    AnomalyModel model = load_checkpoint(a.checkpoint);
    if (kind == ScorerKind::embedded_knn) {
      require(!a.reference.empty(), ErrorCode::invalid_input,
              "score: embedded_knn scoring needs --reference");
      require_file(a.reference);
      const FeatureMatrix reference = read_features(a.reference, model.params.input_dim());
      scorer = Scorer::embedded(std::move(model), reference, config.knn);
    } else {
      scorer = Scorer::from_model(std::move(model));
    }
  }
  ScoreTable all;
  for (const auto& path : a.features) {
    require_file(path);
    const FeatureMatrix rows = read_features(path);
    const ScoreTable t = score_patches(scorer, rows, config.jobs);
    all.rows.insert(all.rows.end(), t.rows.begin(), t.rows.end());
  }
  write_score_csv(a.out, all);
  log_line("scored " + std::to_string(all.rows.size()) + " patches");
  return 0;
}

// --- aggregate ------------------------------------------------------------------

struct AggregateArgs {
  std::vector<std::string> scores;
  std::string out;
  std::optional<double> top_fraction;
};

int cmd_aggregate(const Globals& g, const AggregateArgs& a) {
  PipelineConfig config = resolve_config(g);
  if (a.top_fraction) config.aggregation.top_fraction = *a.top_fraction;
  config.validate();
  ScoreTable all;
  for (const auto& path : a.scores) {
    require_file(path);
    const ScoreTable t = read_score_csv(path);
    all.rows.insert(all.rows.end(), t.rows.begin(), t.rows.end());
  }
  write_slide_score_csv(a.out, aggregate_all(all, config.aggregation));
  return 0;
}

// --- heatmap --------------------------------------------------------------------

struct HeatmapArgs {
  std::string scores;
  std::string slide;
  std::string raster;
  int width = 0, height = 0;
  std::optional<int> patch_size;
  std::vector<double> range;
  std::string out;
  std::string grid_out;
  std::optional<std::string> colormap;
};

int cmd_heatmap(const Globals& g, const HeatmapArgs& a) {
  PipelineConfig config = resolve_config(g);
  if (a.patch_size) config.tile.patch_size = *a.patch_size;
  if (a.colormap) config.colormap = *a.colormap;
  config.validate();
  const Colormap& cmap = colormap_by_name(config.colormap);
  require_file(a.scores);
  int width = a.width, height = a.height;
  if (!a.raster.empty()) {
    require_file(a.raster);
    const SlideRaster r = read_raster(a.raster);
    width = r.width;
    height = r.height;
  }
  require(width > 0 && height > 0, ErrorCode::invalid_input,
          "heatmap: slide size unknown; pass --raster or --width/--height");
  const ScoreTable table = read_score_csv(a.scores);
  std::vector<ScoreRow> rows;
  for (const auto& r : table.rows)
    if (a.slide.empty() || r.coord.slide_id == a.slide) rows.push_back(r);
  double lo = 0.0, hi = 1.0;
  if (a.range.size() == 2) {
    lo = a.range[0];
    hi = a.range[1];
  } else if (!rows.empty()) {
    lo = hi = rows.front().score;
    for (const auto& r : rows) {
      lo = std::min(lo, r.score);
      hi = std::max(hi, r.score);
    }
  }
  const double span = hi > lo ? hi - lo : 1.0;
  HeatmapCanvas canvas(width, height);
  for (const auto& r : rows)
    heatmap_accumulate(canvas, r.coord, (r.score - lo) / span, config.tile.patch_size);
  const HeatmapImage img = heatmap_render(canvas, cmap);
  write_png_rgba(a.out, img.width, img.height, img.rgba);
  if (!a.grid_out.empty())
    write_features(heatmap_grid_features(img, a.slide.empty() ? std::string("heatmap") : a.slide),
                   a.grid_out);
  return 0;
}

// --- eval / crossval ---------------------------------------------------------------

struct EvalArgs {
  std::string slide_scores;
  std::vector<std::string> manifests;
  std::string out;
};

void emit_report(const EvalReport& report, const std::string& out) {
  if (!out.empty()) write_text(out, report_to_json(report));
  std::cout << report_to_table(report);
}

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const PipelineConfig config = resolve_config(g);
  require_file(a.slide_scores);
  const auto scores = read_slide_score_csv(a.slide_scores);
  const auto report =
      evaluate_slide_scores(scores, read_manifests(a.manifests), config.eval.sensitivity_targets);
  emit_report(report, a.out);
  return 0;
}

struct CrossvalArgs {
  std::vector<std::string> manifests;
  std::optional<std::string> objective;
  std::optional<std::string> scorer;
  std::optional<std::uint64_t> seed;
  std::optional<int> folds;
  std::string out;
  TrainFlags flags;
  KnnFlags knn;
};

int cmd_crossval(const Globals& g, const CrossvalArgs& a) {
  PipelineConfig config = resolve_config(g);
  if (a.objective) config.objective = parse_objective(*a.objective);
  if (a.scorer) config.scorer = parse_scorer_kind(*a.scorer);
  if (a.folds) config.eval.folds = *a.folds;
  a.flags.apply(config, config.objective);
  a.knn.apply(config);
  config.validate();
  const auto slides = load_dataset(read_manifests(a.manifests));
  const auto report = run_crossval(slides, config, config.objective, config.scorer, *a.seed);
  emit_report(report, a.out);
  return 0;
}

// --- synth ------------------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::string layout;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

void add_manifest_rows(const FeatureMatrix& pool, const std::string& file, TissueClass tc,
                       Label label, const std::map<std::string, std::string>& groups,
                       std::vector<ManifestEntry>& manifest) {
  std::vector<std::string> ids;
  for (const auto& m : pool.meta)
    if (ids.empty() || ids.back() != m.coord.slide_id) ids.push_back(m.coord.slide_id);
  for (const auto& id : ids) {
    auto it = groups.find(id);
    manifest.push_back({id, file, tc, label, it == groups.end() ? std::string{} : it->second});
  }
}

int cmd_synth(const Globals& g, const SynthArgs& a) {
  (void)resolve_config(g);
  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  if (!a.layout.empty()) {
    RasterLayout layout = raster_layout_from_json(read_text(a.layout));
    if (a.seed) layout.seed = *a.seed;
    const SynthSlide slide = gen_raster(layout);
    write_png_rgb((dir / (layout.slide_id + ".png")).string(), slide.raster);
    write_mask_png((dir / (layout.slide_id + "_truth_mask.png")).string(), slide.mask);
    write_text((dir / (layout.slide_id + "_annotations.json")).string(),
               annotations_to_json(slide.annotations));
    return 0;
  }
  SynthSpec spec = a.spec.empty() ? SynthSpec{} : synth_spec_from_json(read_text(a.spec));
  if (a.seed) spec.seed = *a.seed;
  spec.validate();
  const SynthPools pools = gen_features(spec);
  std::vector<ManifestEntry> manifest;
  const std::map<std::string, std::string> no_groups;
  auto emit = [&](const FeatureMatrix& pool, const std::string& name, TissueClass tc, Label l,
                  const std::map<std::string, std::string>& groups) {
    if (pool.empty()) return;
    write_features(pool, (dir / name).string());
    add_manifest_rows(pool, name, tc, l, groups, manifest);
  };
  emit(pools.normal, "normal.hadf", TissueClass::normal_target, Label::normal, no_groups);
  emit(pools.anomalous, "anomalous.hadf", TissueClass::eval, Label::anomalous, pools.slide_group);
  emit(pools.heldout_normal, "heldout.hadf", TissueClass::eval, Label::normal, no_groups);
  emit(pools.near_oe, "near_oe.hadf", TissueClass::near_oe, Label::unknown, no_groups);
  emit(pools.far_oe, "far_oe.hadf", TissueClass::far_oe, Label::unknown, no_groups);
  write_manifest((dir / "manifest.csv").string(), manifest);
  write_text((dir / "synth_spec.json").string(), to_json(spec));
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Histopathology anomaly detection pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path,
                 std::string("pipeline config JSON (default: $") + kConfigEnvVar + ")");
  app.add_option("--jobs", g.jobs, "worker threads")->check(CLI::PositiveNumber);

  TileArgs tile;
  auto* c_tile = app.add_subcommand("tile", "tissue masks and patch grids for slide rasters");
  c_tile->add_option("slides", tile.slides, "PNG or PPM slide rasters")->required();
  c_tile->add_option("--out-dir", tile.out_dir, "output directory");
  c_tile->add_option("--patch-size", tile.patch_size);
  c_tile->add_option("--stride", tile.stride);
  c_tile->add_option("--max-background", tile.max_background);
  c_tile->add_flag("--heatmap-grid", tile.heatmap_grid, "use the overlapping heatmap stride");
  c_tile->add_flag("--write-patches", tile.write_patches,
                   "also write patch PNGs (stain-normalized when a target is configured)");

  StainArgs stain;
  auto* c_stain = app.add_subcommand("stain-target", "pooled lab statistics of training slides");
  c_stain->add_option("slides", stain.slides)->required();
  c_stain->add_option("--out", stain.out, "output JSON (default: stdout)");
  c_stain->add_flag("--no-mask", stain.no_mask, "use all pixels, not only tissue");

  TrainArgs train_a;
  auto* c_train = app.add_subcommand("train", "train an anomaly head on embedded patches");
  c_train->add_option("--manifest", train_a.manifests)->required();
  c_train->add_option("--objective", train_a.objective,
                      "bce, hsc, deepsad, compactness or autoencoder");
  c_train->add_option("--seed", train_a.seed)->required();
  c_train->add_option("--out", train_a.out, "checkpoint path")->required();
  c_train->add_option("--loss-trace", train_a.loss_trace, "loss trace CSV");
  train_a.flags.add(c_train);

  ScoreArgs score;
  auto* c_score = app.add_subcommand("score", "patch anomaly scores");
  c_score->add_option("--checkpoint", score.checkpoint);
  c_score->add_option("--reference", score.reference, "normal reference features for kNN");
  c_score->add_option("--features", score.features, "feature files to score")->required();
  c_score->add_option("--scorer", score.scorer, "model, knn or embedded_knn");
  c_score->add_option("--out", score.out)->required();
  score.knn.add(c_score);

  AggregateArgs agg;
  auto* c_agg = app.add_subcommand("aggregate", "slide scores from patch scores");
  c_agg->add_option("--scores", agg.scores)->required();
  c_agg->add_option("--out", agg.out)->required();
  c_agg->add_option("--top-fraction", agg.top_fraction);

  HeatmapArgs heat;
  auto* c_heat = app.add_subcommand("heatmap", "overlap-averaged score heatmap");
  c_heat->add_option("--scores", heat.scores)->required();
  c_heat->add_option("--slide", heat.slide, "slide id to render (default: all rows)");
  c_heat->add_option("--raster", heat.raster, "slide raster (for its size)");
  c_heat->add_option("--width", heat.width);
  c_heat->add_option("--height", heat.height);
  c_heat->add_option("--patch-size", heat.patch_size);
  c_heat->add_option("--range", heat.range, "score range mapped onto the colormap")
      ->expected(2);
  c_heat->add_option("--colormap", heat.colormap, "anomaly or gray");
  c_heat->add_option("--out", heat.out, "RGBA PNG")->required();
  c_heat->add_option("--grid-out", heat.grid_out, "raw averaged grid as a feature file");

  EvalArgs eval_a;
  auto* c_eval = app.add_subcommand("eval", "AUROC and sensitivity thresholds of slide scores");
  c_eval->add_option("--slide-scores", eval_a.slide_scores)->required();
  c_eval->add_option("--manifest", eval_a.manifests)->required();
  c_eval->add_option("--out", eval_a.out, "report JSON");

  CrossvalArgs cv;
  auto* c_cv = app.add_subcommand("crossval", "k-fold evaluation over normal slides");
  c_cv->add_option("--manifest", cv.manifests)->required();
  c_cv->add_option("--objective", cv.objective);
  c_cv->add_option("--scorer", cv.scorer, "model, knn or embedded_knn");
  c_cv->add_option("--seed", cv.seed)->required();
  c_cv->add_option("--folds", cv.folds);
  c_cv->add_option("--out", cv.out, "report JSON");
  cv.flags.add(c_cv);
  cv.knn.add(c_cv);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "synthetic feature pools or slide rasters");
  c_synth->add_option("--spec", synth.spec, "SynthSpec JSON (default spec when omitted)");
  c_synth->add_option("--layout", synth.layout, "raster layout JSON");
  c_synth->add_option("--seed", synth.seed);
  c_synth->add_option("--out-dir", synth.out_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*c_tile) return cmd_tile(g, tile);
    if (*c_stain) return cmd_stain_target(g, stain);
    if (*c_train) return cmd_train(g, train_a);
    if (*c_score) return cmd_score(g, score);
    if (*c_agg) return cmd_aggregate(g, agg);
    if (*c_heat) return cmd_heatmap(g, heat);
    if (*c_eval) return cmd_eval(g, eval_a);
    if (*c_cv) return cmd_crossval(g, cv);
    if (*c_synth) return cmd_synth(g, synth);
  } catch (const Error& e) {
    std::string what = e.what();
    if (e.code() == ErrorCode::single_class && what.find("single-class") == std::string::npos)
      what = "single-class labels: " + what;
    log_line("error: " + what);
    return e.code() == ErrorCode::numeric ? 3 : 2;
  } catch (const std::exception& e) {
    log_line(std::string("error: ") + e.what());
    return 2;
  }
  return 2;
}

}  // namespace histoad
