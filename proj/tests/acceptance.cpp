// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "histoad/config.hpp"
#include "histoad/eval.hpp"
#include "histoad/models.hpp"
#include "histoad/pipeline.hpp"
#include "histoad/scoring.hpp"
#include "histoad/stainnorm.hpp"
#include "histoad/synth.hpp"
#include "histoad/tiler.hpp"
#include "oracles.hpp"

using namespace histoad;
using Eigen::VectorXd;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// --- 1 ---------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = Clock::now();
  CounterRng rng(101);
  Outcome o;
  std::string detail;
  for (Objective obj : {Objective::bce, Objective::hsc, Objective::deepsad, Objective::compactness,
                        Objective::autoencoder}) {
    int checked = 0, failed = 0;
    double worst = 0.0;
    for (std::uint64_t t = 0; checked < 120 && t < 2000; ++t) {
      CounterRng cfg = rng.split(t);
      const int d = 2 + int(cfg.uniform_index(7));
      const int h = 2 + int(cfg.uniform_index(9));
      const int e = 1 + int(cfg.uniform_index(4));
      std::vector<int> widths;
      if (obj == Objective::autoencoder) widths = {d, h, std::max(1, d / 2), h, d};
      else if (obj == Objective::bce) widths = cfg.uniform() < 0.3 ? std::vector<int>{d, 1} : std::vector<int>{d, h, 1};
      else widths = cfg.uniform() < 0.3 ? std::vector<int>{d, e} : std::vector<int>{d, h, e};
      const MlpParams p = make_mlp(widths, cfg);
      VectorXd x(d);
      for (int i = 0; i < d; ++i) x[i] = 2.0 * cfg.normal();
      if (near_relu_kink(p, x, 1e-3)) continue;
      VectorXd c(p.output_dim());
      for (int i = 0; i < c.size(); ++i) c[i] = 0.5 * cfg.normal();
      const int label = obj == Objective::autoencoder || obj == Objective::compactness ? 0 : int(t % 2);
      const VectorXd* center = uses_center(obj) ? &c : nullptr;
      MlpParams grads = p.zeros_like();
      sample_loss_grad<double>(p, obj, x, label, center, &grads);
      auto loss = [&](const VectorXd& flat) {
        MlpParams q = p;
        q.assign(flat);
        return sample_loss_grad<double>(q, obj, x, label, center, nullptr);
      };
      const auto r = finite_diff_check(p.flatten(), loss, grads.flatten(), 1e-4);
      worst = std::max(worst, r.max_relative_error);
      failed += !r.passed;
      ++checked;
    }
    if (checked < 100 || failed > 0) o.pass = false;
    detail += std::string(to_string(obj)) + fmt(" %.0f cfgs max %.1e; ", checked, worst);
  }
  const double secs = seconds_since(t0);
  if (secs >= 30.0) o.pass = false;
  o.detail = detail + fmt("%.2f s", secs);
  return o;
}

// --- 2 ---------------------------------------------------------------------------

Outcome auroc_oracle() {
  CounterRng rng(202);
  double worst = 0.0;
  int datasets = 0;
  while (datasets < 1000) {
    const std::size_t n = 2 + rng.uniform_index(499);
    const bool ties = rng.uniform() < 0.5;
    const int levels = 2 + int(rng.uniform_index(20));
    LabeledScores d;
    for (std::size_t i = 0; i < n; ++i)
      d.push(ties ? double(rng.uniform_index(std::uint64_t(levels))) : rng.normal(),
             rng.uniform() < 0.3);
    if (d.count_anomalous() == 0 || d.count_anomalous() == n) continue;
    worst = std::max(worst, std::abs(auroc(d) - oracle::pairwise_auroc(d.score, d.anomalous)));
    ++datasets;
  }
  return {worst <= 1e-12, fmt("1000 datasets, max |diff| %.2e", worst)};
}

// --- 3 ---------------------------------------------------------------------------

Outcome aggregation_oracle() {
  CounterRng rng(303);
  int mismatches = 0;
  for (int s = 0; s < 1000; ++s) {
    const std::size_t n = 1 + rng.uniform_index(10000);
    std::vector<double> scores(n);
    const bool ties = rng.uniform() < 0.3;
    for (auto& v : scores) v = ties ? double(rng.uniform_index(30)) / 30.0 : rng.uniform();
    const double f = std::vector<double>{0.01, 0.05, 0.10, 0.25, 0.5, 1.0}[rng.uniform_index(6)];
    std::vector<ScoreRow> rows;
    for (std::size_t i = 0; i < n; ++i) rows.push_back({{"s", int(i % 100), int(i / 100)}, scores[i]});
    mismatches += aggregate_slide(rows, {f}) != oracle::top_fraction_mean(scores, f);
  }
  std::vector<ScoreRow> worked;
  for (int i = 1; i <= 100; ++i) worked.push_back({{"w", i, 0}, i / 100.0});
  const double got = aggregate_slide(worked, {0.10});
  // 0.955 is not a double; within 1e-12 is exact up to the last-bit summation order.
  const bool example = std::abs(got - 0.955) < 1e-12;
  return {mismatches == 0 && example,
          fmt("1000 slides, %.0f mismatches; worked example %.17g", mismatches, got)};
}

// --- 4, 5, 6 ---------------------------------------------------------------------

struct SynthRun {
  SynthPools pools;
  FeatureMatrix test;           // held-out normals then anomalies
  std::vector<bool> anomalous;
};

SynthRun synth_run(double shift_norm) {
  SynthSpec spec;
  spec.dim = 16;
  spec.shift_norm = shift_norm;
  spec.n_normal = 2000;
  spec.n_anomalous = 200;
  spec.n_heldout_normal = 2000;
  spec.seed = 404;
  SynthRun r{gen_features(spec), FeatureMatrix(16), {}};
  r.test.append(r.pools.heldout_normal);
  r.test.append(r.pools.anomalous);
  r.anomalous.assign(r.pools.heldout_normal.size(), false);
  r.anomalous.resize(r.test.size(), true);
  return r;
}

struct MethodResult {
  double auroc = 0.0;
  double seconds = 0.0;
};

MethodResult run_method(const SynthRun& r, Objective obj, ScorerKind kind) {
  const auto t0 = Clock::now();
  const PipelineConfig config;
  const Scorer s = fit_scorer(config, obj, kind, r.pools.normal, r.pools.near_oe, r.pools.far_oe, 7);
  const auto scores = s.score_rows(r.test, 1);
  LabeledScores d;
  for (std::size_t i = 0; i < scores.size(); ++i) d.push(scores[i], r.anomalous[i]);
  return {auroc(d), seconds_since(t0)};
}

struct SynthResults {
  MethodResult bce, knn, occ, ae, hsc, deepsad;
  MethodResult null_bce, null_knn, null_occ;
};

const SynthResults& synth_results() {
  static const SynthResults res = [] {
    SynthResults s;
    const SynthRun sep = synth_run(4.0);
    s.bce = run_method(sep, Objective::bce, ScorerKind::model);
    s.knn = run_method(sep, Objective::bce, ScorerKind::knn);
    s.occ = run_method(sep, Objective::compactness, ScorerKind::model);
    s.ae = run_method(sep, Objective::autoencoder, ScorerKind::model);
    s.hsc = run_method(sep, Objective::hsc, ScorerKind::model);
    s.deepsad = run_method(sep, Objective::deepsad, ScorerKind::model);
    const SynthRun null = synth_run(0.0);
    s.null_bce = run_method(null, Objective::bce, ScorerKind::model);
    s.null_knn = run_method(null, Objective::bce, ScorerKind::knn);
    s.null_occ = run_method(null, Objective::compactness, ScorerKind::model);
    return s;
  }();
  return res;
}

Outcome separability() {
  const auto& s = synth_results();
  const bool a = s.bce.auroc >= 0.97, b = s.knn.auroc >= 0.95, c = s.occ.auroc >= 0.90;
  bool fast = true;
  for (const auto* m : {&s.bce, &s.knn, &s.occ, &s.null_bce, &s.null_knn, &s.null_occ})
    fast = fast && m->seconds < 120.0;
  bool null_ok = true;
  for (const auto* m : {&s.null_bce, &s.null_knn, &s.null_occ})
    null_ok = null_ok && std::abs(m->auroc - 0.5) <= 0.05;
  const std::string detail = fmt("(a) OE-BCE %.4f ", s.bce.auroc) + (a ? "ok" : "LOW") +
           fmt(", (b) kNN %.4f ", s.knn.auroc) + (b ? "ok" : "LOW") +
           fmt(", (c) compactness %.4f ", s.occ.auroc) + (c ? "ok" : "LOW") +
           fmt("; null: %.3f / %.3f / %.3f", s.null_bce.auroc, s.null_knn.auroc, s.null_occ.auroc) +
           fmt("; slowest method %.1f s",
               std::max({s.bce.seconds, s.knn.seconds, s.occ.seconds, s.null_bce.seconds,
                         s.null_knn.seconds, s.null_occ.seconds}));
  return {a && b && c && null_ok && fast, detail};
}

Outcome autoencoder_below_bce() {
  const auto& s = synth_results();
  return {s.ae.auroc < s.bce.auroc, fmt("autoencoder %.4f < OE-BCE %.4f", s.ae.auroc, s.bce.auroc)};
}

Outcome loss_parity() {
  const auto& s = synth_results();
  const double lo = std::min({s.bce.auroc, s.hsc.auroc, s.deepsad.auroc});
  const double hi = std::max({s.bce.auroc, s.hsc.auroc, s.deepsad.auroc});
  return {hi - lo <= 0.05,
          fmt("BCE %.4f, HSC %.4f, DeepSAD %.4f, spread %.4f", s.bce.auroc, s.hsc.auroc,
              s.deepsad.auroc, hi - lo)};
}

// --- 7 ---------------------------------------------------------------------------

Outcome stain() {
  CounterRng rng(707);
  double worst_stat = 0.0;
  int worst_level = 0;
  for (int t = 0; t < 100; ++t) {
    const int w = 16 + int(rng.uniform_index(48)), h = 16 + int(rng.uniform_index(48));
    SlideRaster p("p", w, h);
    const int base[3] = {100 + int(rng.uniform_index(100)), 30 + int(rng.uniform_index(100)),
                         80 + int(rng.uniform_index(100))};
    const int spread = 10 + int(rng.uniform_index(50));
    for (int i = 0; i < w * h; ++i)
      for (int c = 0; c < 3; ++c)
        p.pixels[std::size_t(3 * i + c)] = std::uint8_t(std::clamp(
            base[c] + int(rng.uniform_index(std::uint64_t(2 * spread + 1))) - spread, 1, 255));
    LabStats target;
    target.mean = rgb_to_lab({rng.uniform(120, 220), rng.uniform(40, 140), rng.uniform(90, 200)});
    target.std = Vec3(rng.uniform(0.05, 0.3), rng.uniform(0.01, 0.08), rng.uniform(0.005, 0.05));
    const LabStats src = compute_stats(p);
    const LabStats got = lab_point_stats(normalize_to_lab(p, src, target));
    worst_stat = std::max({worst_stat, (got.mean - target.mean).cwiseAbs().maxCoeff(),
                           (got.std - target.std).cwiseAbs().maxCoeff()});
    const SlideRaster same = normalize(p, src, src);
    for (std::size_t i = 0; i < p.pixels.size(); ++i)
      worst_level = std::max(worst_level, std::abs(int(same.pixels[i]) - int(p.pixels[i])));
  }
  return {worst_stat < 1e-2 && worst_level <= 1,
          fmt("100 patches, max stat error %.2e, max identity deviation %.0f levels", worst_stat,
              worst_level)};
}

// --- 8 ---------------------------------------------------------------------------

Outcome tiling() {
  CounterRng rng(808);
  int mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    const int p = 8 + int(rng.uniform_index(120));
    const int s = 1 + int(rng.uniform_index(std::uint64_t(p)));
    const int w = p + int(rng.uniform_index(600)), h = p + int(rng.uniform_index(600));
    const auto coords = enumerate_patches(TissueMask(w, h, true), TileSpec{p, s, 0.8});
    const int expect = ((w - p) / s + 1) * ((h - p) / s + 1);
    mismatches += int(coords.size()) != expect;
  }
  const int area = 340 * 340;
  TissueMask at80(340, 340, true), over80(340, 340, true);
  for (int i = 0; i < area * 80 / 100; ++i) at80.set(i % 340, i / 340, false);
  for (int i = 0; i < area * 80 / 100 + 1; ++i) over80.set(i % 340, i / 340, false);
  const bool inclusive = enumerate_patches(at80, TileSpec{}).size() == 1 &&
                         enumerate_patches(over80, TileSpec{}).empty();
  return {mismatches == 0 && inclusive,
          fmt("200 combinations, %.0f mismatches; 80%% kept, 80%%+1px dropped: ", mismatches) +
              (inclusive ? "yes" : "no")};
}

// --- 9 ---------------------------------------------------------------------------

Outcome heatmap() {
  const int p = 340, w = 945, h = 340;
  const std::vector<oracle::Window> windows{{0, 0, 0.2}, {265, 0, 0.7}, {530, 0, 0.4}};
  HeatmapCanvas c(w, h);
  for (const auto& win : windows) heatmap_accumulate(c, {"strip", win.x, win.y}, win.score, p);
  const auto want = oracle::pixel_average(w, h, p, windows);
  const HeatmapImage img = heatmap_render(c, colormap_by_name("anomaly"));
  int mismatches = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = std::size_t(y) * w + x;
      const double got = c.value(x, y);
      const bool same = got == want[i] || (std::isnan(got) && std::isnan(want[i]));
      const bool grid_same = img.grid[i] == float(want[i]) || (std::isnan(img.grid[i]) && std::isnan(want[i]));
      mismatches += !(same && grid_same);
    }
  return {mismatches == 0, fmt("945x340 strip, %.0f pixel mismatches", mismatches)};
}

// --- 10 --------------------------------------------------------------------------

Outcome sensitivity() {
  LabeledScores sep;
  for (int i = 0; i < 50; ++i) sep.push(0.6 + 0.008 * i, true);
  for (int i = 0; i < 80; ++i) sep.push(0.005 * i, false);
  const double f100 = sensitivity_threshold(sep, 1.00).automatable_fraction;

  CounterRng rng(1010);
  bool monotone = true;
  for (int t = 0; t < 500; ++t) {
    LabeledScores d;
    for (int i = 0; i < 60; ++i) d.push(rng.normal() + (i < 20 ? 1.5 : 0.0), i < 20);
    const double a = sensitivity_threshold(d, 0.95).automatable_fraction;
    const double b = sensitivity_threshold(d, 0.99).automatable_fraction;
    const double c = sensitivity_threshold(d, 1.00).automatable_fraction;
    monotone = monotone && a >= b && b >= c;
  }
  LabeledScores hand;
  for (double s : {0.9, 0.8}) hand.push(s, true);
  for (double s : {0.1, 0.5, 0.85}) hand.push(s, false);
  const auto h = sensitivity_threshold(hand, 1.0);
  const bool hand_ok = h.threshold == 0.8 && h.automatable_fraction == 2.0 / 3.0;
  return {f100 == 1.0 && monotone && hand_ok,
          fmt("separated fraction %.3f; hand example t=%.2f fraction %.6f; monotone over 500 sets: ",
              f100, h.threshold, h.automatable_fraction) +
              (monotone ? "yes" : "no")};
}

// --- 11 --------------------------------------------------------------------------

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = "\"" HISTOAD_CLI_PATH "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
  const std::string dir = oracle::temp_dir("acceptance_cv");
  std::ofstream(dir + "/spec.json") << R"({"dim": 16, "n_normal": 600, "n_anomalous": 100,
    "n_near_oe": 300, "n_far_oe": 300, "seed": 11})";
  std::ofstream(dir + "/config.json") << R"({"train_oe": {"steps": 300}})";
  if (run_cli("synth --spec " + dir + "/spec.json --out-dir " + dir) != 0)
    return {false, "synth failed"};
  const std::string base = "--config " + dir + "/config.json crossval --manifest " + dir +
                           "/manifest.csv --seed 5 --jobs 2 --out ";
  if (run_cli(base + dir + "/a.json") != 0 || run_cli(base + dir + "/b.json") != 0)
    return {false, "crossval failed"};
  const std::string a = slurp(dir + "/a.json"), b = slurp(dir + "/b.json");
  return {!a.empty() && a == b, fmt("two crossval reports, %.0f bytes each, identical: ", double(a.size())) +
                                    (a == b ? "yes" : "no")};
}

// --- 12 --------------------------------------------------------------------------

Outcome defaults() {
  const PipelineConfig c;
  std::vector<std::string> wrong;
  auto expect = [&](bool ok, const char* name) {
    if (!ok) wrong.push_back(name);
  };
  expect(c.tile.patch_size == 340, "patch size 340");
  expect(c.tile.max_background_fraction == 0.80, "background 0.80");
  expect(c.heatmap_overlap == 75 && c.heatmap_tile().stride == 265, "overlap 75");
  expect(c.train_oe.batch_size == 32 && c.train_occ.batch_size == 32, "batch 32");
  expect(c.train_oe.learning_rate == 5e-4, "OE lr 5e-4");
  expect(c.train_occ.learning_rate == 1e-2, "OCC lr 1e-2");
  expect(c.train_oe.momentum == 0.9, "momentum 0.9");
  expect(c.train_oe.weight_decay == 1e-4, "wd 1e-4");
  expect(c.train_occ.grad_clip_norm && *c.train_occ.grad_clip_norm == 1e-3, "clip 1e-3");
  expect(c.oe_filter.cosine_threshold == 0.9, "cosine 0.9");
  expect(c.tta.n_views == 10, "10 TTA views");
  expect(c.aggregation.top_fraction == 0.10, "top 10%");
  expect(c.eval.folds == 5, "5 folds");
  std::string detail = wrong.empty() ? "13 defaults checked" : "wrong:";
  for (const auto& w : wrong) detail += " " + w + ";";
  return {wrong.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},
      {"AUROC oracle equivalence", auroc_oracle},
      {"aggregation oracle", aggregation_oracle},
      {"synthetic separability", separability},
      {"autoencoder below OE-BCE", autoencoder_below_bce},
      {"loss-ablation parity", loss_parity},
      {"stain normalization", stain},
      {"tiling grid and 80% rule", tiling},
      {"heatmap pixel oracle", heatmap},
      {"sensitivity thresholds", sensitivity},
      {"crossval determinism", determinism},
      {"config defaults", defaults},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", int(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
