#include <doctest.h>

#include <cmath>

#include "histoad/scoring.hpp"
#include "oracles.hpp"

using namespace histoad;
using Eigen::VectorXd;

namespace {

FeatureMatrix points(std::initializer_list<std::initializer_list<double>> rows) {
  FeatureMatrix m(int(rows.begin()->size()));
  for (const auto& r : rows) {
    Eigen::RowVectorXd v(Eigen::Index(r.size()));
    int j = 0;
    for (double x : r) v[j++] = x;
    m.append(v, {});
  }
  return m;
}

FeatureMatrix random_points(CounterRng& rng, int n, int d) {
  FeatureMatrix m(d);
  for (int i = 0; i < n; ++i) {
    Eigen::RowVectorXd v(d);
    for (int j = 0; j < d; ++j) v[j] = rng.normal();
    m.append(v, {{"s", i, 0}, TissueClass::eval, Label::unknown});
  }
  return m;
}

std::vector<double> hand_distances(const VectorXd& q, const FeatureMatrix& ref) {
  std::vector<double> d;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    double s = 0;
    for (int j = 0; j < ref.dim(); ++j) {
      const double diff = q[j] - double(ref.rows(Eigen::Index(i), j));
      s += diff * diff;
    }
    d.push_back(std::sqrt(s));
  }
  std::sort(d.begin(), d.end());
  return d;
}

std::vector<ScoreRow> rows_of(const std::vector<double>& scores) {
  std::vector<ScoreRow> rows;
  for (std::size_t i = 0; i < scores.size(); ++i)
    rows.push_back({{"s", int(i % 97) * 265, int(i / 97) * 265}, scores[i]});
  return rows;
}

}  // namespace

TEST_SUITE("scoring") {

TEST_CASE("knn examples") {
  const FeatureMatrix ref = points({{0, 0}, {3, 4}, {6, 8}});
  CHECK(knn_score(Eigen::Vector2d(3, 4), ref, {1}) == 0.0);
  CHECK(knn_score(Eigen::Vector2d(0, 0), ref, {2}) == 2.5);
  CHECK(knn_score(Eigen::Vector2d(0, 0), ref, {2, KnnMode::kth}) == 5.0);
  CHECK(knn_score(Eigen::Vector2d(0, 0), ref, {3}) == 5.0);
  CHECK_THROWS_AS(knn_score(Eigen::Vector2d(0, 0), ref, {4}), Error);
  CHECK_THROWS_AS(knn_score(Eigen::Vector2d(0, 0), ref, {0}), Error);
}

TEST_CASE("knn equals the sort-based oracle and ignores reference order") {
  CounterRng rng(1);
  for (int t = 0; t < 50; ++t) {
    const FeatureMatrix ref = random_points(rng, 40, 5);
    const int k = 1 + int(rng.uniform_index(40));
    VectorXd q(5);
    for (int j = 0; j < 5; ++j) q[j] = rng.normal();
    const auto d = hand_distances(q, ref);
    double want = 0;
    for (int i = 0; i < k; ++i) want += d[std::size_t(i)];
    want /= k;
    const double got = knn_score(q, ref, {k});
    CHECK(got == doctest::Approx(want).epsilon(1e-12));

    std::vector<std::size_t> perm(ref.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = perm.size() - 1 - i;
    CHECK(knn_score(q, ref.select(perm), {k}) == doctest::Approx(got).epsilon(1e-14));
  }
}

TEST_CASE("parallel knn scores equal the serial ones") {
  CounterRng rng(2);
  const FeatureMatrix ref = random_points(rng, 100, 4);
  const FeatureMatrix q = random_points(rng, 37, 4);
  CHECK(knn_scores(q, ref, {5}, 1) == knn_scores(q, ref, {5}, 4));
}

TEST_CASE("classifier examples") {
  MlpParams head;
  Eigen::MatrixXd w(1, 2);
  w << 1, -1;
  head.layers.push_back({w, VectorXd::Zero(1), Activation::identity});
  CHECK(classifier_score(head, Eigen::Vector2d(0, 0)) == 0.5);
  CHECK(std::abs(classifier_score(head, Eigen::Vector2d(2, 1)) - 0.7310586) < 1e-7);
  const double sat = classifier_score(head, Eigen::Vector2d(50, 0));
  CHECK(1.0 - sat < 1e-20);
  // Strictly inside (0, 1) wherever double resolves it.
  for (double z = -30; z <= 30; z += 0.5) {
    const double s = classifier_score(head, Eigen::Vector2d(z, 0));
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("tta examples") {
  const std::vector<double> one{0.5};
  CHECK(tta_score(one) == 0.5);
  const std::vector<double> same(10, 0.37);
  CHECK(tta_score(same) == 0.37);
  const std::vector<double> four{0.1, 0.2, 0.3, 0.4};
  CHECK(tta_score(four) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("aggregation worked example: top 10% of 0.01..1.00") {
  std::vector<double> s;
  for (int i = 1; i <= 100; ++i) s.push_back(i / 100.0);
  const double got = aggregate_slide(rows_of(s));
  // 0.955 has no exact double; summation order decides the last bit.
  CHECK(std::abs(got - 0.955) < 1e-12);
  CHECK(got == oracle::top_fraction_mean(s, 0.10));
}

TEST_CASE("aggregation edge cases") {
  CHECK(aggregate_slide(rows_of({0.42}), {0.10}) == 0.42);
  CHECK(aggregate_slide(rows_of({0.42}), {1.0}) == 0.42);
  const std::vector<double> s{0.3, 0.1, 0.2};
  CHECK(aggregate_slide(rows_of(s), {1.0}) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(top_count(100, 0.10) == 10);
  CHECK(top_count(101, 0.10) == 11);
  CHECK(top_count(3, 0.10) == 1);
  CHECK_THROWS_AS(aggregate_slide(rows_of({}), {0.1}), Error);
  CHECK_THROWS_AS(aggregate_slide(rows_of({0.1}), {0.0}), Error);
}

TEST_CASE("aggregation is permutation invariant and ignores low additions") {
  CounterRng rng(3);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.uniform_index(300);
    std::vector<double> s(n);
    for (auto& v : s) v = double(rng.uniform_index(50)) / 7.0;  // ties on purpose
    const double base = aggregate_slide(rows_of(s));
    CHECK(base == oracle::top_fraction_mean(s, 0.1));
    std::vector<double> rev(s.rbegin(), s.rend());
    CHECK(aggregate_slide(rows_of(rev)) == base);
    // Adding a patch below the cutoff while m stays the same.
    std::vector<double> more = s;
    more.push_back(-1.0);
    if (top_count(more.size(), 0.1) == top_count(s.size(), 0.1))
      CHECK(aggregate_slide(rows_of(more)) == base);
  }
}

TEST_CASE("aggregate_all groups by slide") {
  ScoreTable t;
  t.rows = {{{"a", 0, 0}, 0.1}, {{"b", 0, 0}, 0.9}, {{"a", 340, 0}, 0.5}};
  const auto slides = aggregate_all(t);
  REQUIRE(slides.size() == 2);
  CHECK(slides[0].slide_id == "a");
  CHECK(slides[0].score == 0.5);
  CHECK(slides[1].score == 0.9);
}

TEST_CASE("score CSVs round trip") {
  const std::string dir = oracle::temp_dir("scorecsv");
  ScoreTable t;
  t.rows = {{{"a", 0, 0}, 0.125}, {{"b", 265, 530}, 3.5}};
  write_score_csv(dir + "/s.csv", t);
  const ScoreTable back = read_score_csv(dir + "/s.csv");
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[1].coord == t.rows[1].coord);
  CHECK(back.rows[1].score == 3.5);
  write_slide_score_csv(dir + "/slides.csv", {{"a", 0.25}, {"b", 0.75}});
  const auto s = read_slide_score_csv(dir + "/slides.csv");
  REQUIRE(s.size() == 2);
  CHECK(s[1].slide_id == "b");
  CHECK(s[1].score == 0.75);
  ScoreTable dup;
  dup.rows = {{{"a", 0, 0}, 0.1}, {{"a", 0, 0}, 0.2}};
  CHECK_THROWS_AS(dup.validate(), Error);
}

TEST_CASE("heatmap: overlapping and single patches") {
  HeatmapCanvas c(20, 10);
  heatmap_accumulate(c, {"s", 2, 1}, 0.2, 5);
  heatmap_accumulate(c, {"s", 2, 1}, 0.8, 5);
  CHECK(c.value(3, 3) == 0.5);
  CHECK(std::isnan(c.value(0, 0)));
  HeatmapCanvas d(20, 10);
  heatmap_accumulate(d, {"s", 10, 0}, 0.7, 5);
  const HeatmapImage img = heatmap_render(d, colormap_by_name("anomaly"));
  CHECK(img.grid[12] == 0.7f);
  CHECK(img.rgba[4 * 12 + 3] == 255);
  CHECK(img.rgba[3] == 0);
  CHECK(std::isnan(img.grid[0]));
  CHECK_THROWS_AS(heatmap_accumulate(d, {"s", 18, 0}, 0.7, 5), Error);
}

TEST_CASE("heatmap equals the per-pixel oracle on the 945-wide strip") {
  const int p = 340, w = 945, h = 340;
  const std::vector<oracle::Window> windows{{0, 0, 0.1}, {265, 0, 0.9}, {530, 0, 0.3}};
  HeatmapCanvas c(w, h);
  for (const auto& win : windows) heatmap_accumulate(c, {"s", win.x, win.y}, win.score, p);
  const auto want = oracle::pixel_average(w, h, p, windows);
  int mismatches = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double got = c.value(x, y), ref = want[std::size_t(y) * w + x];
      if (!(got == ref || (std::isnan(got) && std::isnan(ref)))) ++mismatches;
    }
  CHECK(mismatches == 0);
  CHECK(c.value(300, 0) == 0.5);
  CHECK(std::isnan(c.value(900, 0)));
}

TEST_CASE("heatmap values stay within contributing scores") {
  CounterRng rng(4);
  HeatmapCanvas c(200, 120);
  std::vector<oracle::Window> windows;
  for (int i = 0; i < 40; ++i) {
    const oracle::Window win{int(rng.uniform_index(170)), int(rng.uniform_index(90)), rng.uniform()};
    windows.push_back(win);
    heatmap_accumulate(c, {"s", win.x, win.y}, win.score, 30);
  }
  for (int y = 0; y < 120; y += 3)
    for (int x = 0; x < 200; x += 3) {
      double lo = INFINITY, hi = -INFINITY;
      for (const auto& w : windows)
        if (x >= w.x && x < w.x + 30 && y >= w.y && y < w.y + 30) {
          lo = std::min(lo, w.score);
          hi = std::max(hi, w.score);
        }
      const double v = c.value(x, y);
      if (std::isinf(lo)) {
        CHECK(std::isnan(v));
      } else {
        CHECK(v >= lo);
        CHECK(v <= hi);
      }
    }
}

TEST_CASE("colormap endpoints and midpoint") {
  const Colormap& cm = colormap_by_name("anomaly");
  CHECK(cm.interpolate(0.0) == std::array<double, 3>{40, 80, 200});
  CHECK(cm.interpolate(1.0) == std::array<double, 3>{240, 40, 20});
  CHECK(cm.interpolate(0.5) == std::array<double, 3>{140, 60, 110});
  CHECK(cm.interpolate(-3.0) == cm.interpolate(0.0));
  const Colormap& g = colormap_by_name("gray");
  CHECK(g.interpolate(0.5) == std::array<double, 3>{127.5, 127.5, 127.5});
  CHECK_THROWS_AS(colormap_by_name("viridis"), Error);
}

TEST_CASE("canvases merge by summation") {
  HeatmapCanvas a(10, 10), b(10, 10);
  heatmap_accumulate(a, {"s", 0, 0}, 0.2, 5);
  heatmap_accumulate(b, {"s", 0, 0}, 0.6, 5);
  a.merge(b);
  CHECK(a.value(1, 1) == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("grid features hold one row per pixel") {
  HeatmapCanvas c(4, 3);
  heatmap_accumulate(c, {"s", 1, 1}, 0.5, 2);
  const FeatureMatrix f = heatmap_grid_features(heatmap_render(c, colormap_by_name("gray")), "s");
  CHECK(f.size() == 12);
  CHECK(f.dim() == 1);
  CHECK(f.rows(5, 0) == 0.5f);
  CHECK(f.meta[5].coord.x == 1);
  CHECK(f.meta[5].coord.y == 1);
}

}  // TEST_SUITE
