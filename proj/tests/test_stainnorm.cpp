#include <doctest.h>

#include <cmath>

#include "histoad/rng.hpp"
#include "histoad/stainnorm.hpp"

using namespace histoad;

namespace {

// Independent lab conversion with the constants written inline.
Vec3 hand_lab(double r, double g, double b) {
  const double l = 0.3811 * r + 0.5783 * g + 0.0402 * b;
  const double m = 0.1967 * r + 0.7244 * g + 0.0782 * b;
  const double s = 0.0241 * r + 0.1288 * g + 0.8444 * b;
  const double L = std::log10(l), M = std::log10(m), S = std::log10(s);
  return {(L + M + S) / std::sqrt(3.0), (L + M - 2 * S) / std::sqrt(6.0), (L - M) / std::sqrt(2.0)};
}

SlideRaster random_patch(CounterRng& rng, int w = 24, int h = 24) {
  SlideRaster r("p", w, h);
  // Stained-tissue-like colors: pink/purple with moderate spread.
  for (int i = 0; i < w * h; ++i) {
    r.pixels[3 * i + 0] = std::uint8_t(120 + rng.uniform_index(110));
    r.pixels[3 * i + 1] = std::uint8_t(40 + rng.uniform_index(100));
    r.pixels[3 * i + 2] = std::uint8_t(90 + rng.uniform_index(110));
  }
  return r;
}

}  // namespace

TEST_SUITE("stainnorm") {

TEST_CASE("lab conversion matches the hand formulas") {
  CounterRng rng(2);
  for (int i = 0; i < 200; ++i) {
    const double r = 1 + double(rng.uniform_index(255)), g = 1 + double(rng.uniform_index(255)),
                 b = 1 + double(rng.uniform_index(255));
    const Vec3 got = rgb_to_lab({r, g, b});
    const Vec3 want = hand_lab(r, g, b);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("inverse matrices invert the forward ones") {
  CHECK((reinhard::kRgbToLms * reinhard::lms_to_rgb() - Eigen::Matrix3d::Identity())
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  CHECK((reinhard::log_lms_to_lab() * reinhard::lab_to_log_lms() - Eigen::Matrix3d::Identity())
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("single colour: mean is that colour, std clamped") {
  SlideRaster r("c", 8, 8);
  r.fill_rect(0, 0, 8, 8, 200, 80, 120);
  const LabStats s = compute_stats(r);
  CHECK((s.mean - hand_lab(200, 80, 120)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(s.std_clamped);
  CHECK(s.std == Vec3::Constant(reinhard::kStdEpsilon));
}

TEST_CASE("two pixels: mean and population std of the l channel") {
  SlideRaster r("two", 2, 1);
  r.fill_rect(0, 0, 1, 1, 200, 80, 120);
  r.fill_rect(1, 0, 1, 1, 90, 60, 160);
  const double a = hand_lab(200, 80, 120)[0], b = hand_lab(90, 60, 160)[0];
  const LabStats s = compute_stats(r);
  CHECK(s.mean[0] == doctest::Approx((a + b) / 2).epsilon(1e-12));
  CHECK(s.std[0] == doctest::Approx(std::abs(a - b) / 2).epsilon(1e-12));
}

TEST_CASE("mid-gray has near-zero opponent channels") {
  SlideRaster r("g", 4, 4);
  r.fill_rect(0, 0, 4, 4, 128, 128, 128);
  const LabStats s = compute_stats(r);
  // The LMS rows sum to 0.9996, 0.9993, 0.9973, so gray is only nearly achromatic.
  CHECK(std::abs(s.mean[1]) < 2e-3);
  CHECK(std::abs(s.mean[2]) < 2e-3);
}

TEST_CASE("mask restricts the pixels") {
  SlideRaster r("m", 4, 1);
  r.fill_rect(0, 0, 2, 1, 200, 80, 120);
  r.fill_rect(2, 0, 2, 1, 10, 10, 10);
  TissueMask m(4, 1);
  m.set_rect(0, 0, 2, 1, true);
  CHECK((compute_stats(r, &m).mean - hand_lab(200, 80, 120)).norm() < 1e-12);
  TissueMask one(4, 1);
  one.set(0, 0, true);
  CHECK_THROWS_AS(compute_stats(r, &one), Error);
}

TEST_CASE("source equal to target is the identity within one level") {
  CounterRng rng(4);
  for (int t = 0; t < 10; ++t) {
    const SlideRaster p = random_patch(rng);
    const LabStats s = compute_stats(p);
    const SlideRaster out = normalize(p, s, s);
    for (std::size_t i = 0; i < p.pixels.size(); ++i)
      CHECK(std::abs(int(out.pixels[i]) - int(p.pixels[i])) <= 1);
  }
}

TEST_CASE("round trip RGB -> lab -> RGB within one level") {
  for (int r = 1; r < 256; r += 17)
    for (int g = 1; g < 256; g += 19)
      for (int b = 1; b < 256; b += 23) {
        const Vec3 back = lab_to_rgb(rgb_to_lab({double(r), double(g), double(b)}));
        CHECK(std::abs(back[0] - r) <= 1.0);
        CHECK(std::abs(back[1] - g) <= 1.0);
        CHECK(std::abs(back[2] - b) <= 1.0);
      }
}

TEST_CASE("constant patch maps to the target mean") {
  SlideRaster p("c", 5, 5);
  p.fill_rect(0, 0, 5, 5, 180, 90, 140);
  LabStats target;
  target.mean = hand_lab(150, 70, 160);
  target.std = Vec3(0.2, 0.05, 0.03);
  const auto lab = normalize_to_lab(p, compute_stats(p), target);
  for (Eigen::Index i = 0; i < lab.rows(); ++i)
    CHECK((lab.row(i).transpose() - target.mean).cwiseAbs().maxCoeff() == 0.0);
  const SlideRaster out = normalize(p, target);
  for (int i = 0; i < 25; ++i) {
    CHECK(std::abs(int(out.pixels[3 * i + 0]) - 150) <= 1);
    CHECK(std::abs(int(out.pixels[3 * i + 1]) - 70) <= 1);
    CHECK(std::abs(int(out.pixels[3 * i + 2]) - 160) <= 1);
  }
}

TEST_CASE("normalized statistics match the target before clamping") {
  CounterRng rng(8);
  const LabStats target{hand_lab(170, 90, 150), Vec3(0.15, 0.04, 0.02), false};
  for (int t = 0; t < 10; ++t) {
    const SlideRaster p = random_patch(rng);
    const LabStats got = lab_point_stats(normalize_to_lab(p, compute_stats(p), target));
    CHECK((got.mean - target.mean).cwiseAbs().maxCoeff() < 1e-2);
    CHECK((got.std - target.std).cwiseAbs().maxCoeff() < 1e-2);
  }
}

TEST_CASE("normalizing twice changes statistics only by quantization") {
  CounterRng rng(12);
  const LabStats target{hand_lab(170, 90, 150), Vec3(0.15, 0.04, 0.02), false};
  const SlideRaster once = normalize(random_patch(rng), target);
  const LabStats s1 = compute_stats(once);
  const SlideRaster twice = normalize(once, s1, s1);
  const LabStats s2 = compute_stats(twice);
  CHECK((s1.mean - s2.mean).cwiseAbs().maxCoeff() < 1e-2);
  CHECK((s1.std - s2.std).cwiseAbs().maxCoeff() < 1e-2);
}

TEST_CASE("normalize is deterministic") {
  CounterRng rng(13);
  const SlideRaster p = random_patch(rng);
  const LabStats target{hand_lab(170, 90, 150), Vec3(0.15, 0.04, 0.02), false};
  CHECK(normalize(p, target).pixels == normalize(p, target).pixels);
}

TEST_CASE("pooled target and JSON round trip") {
  LabStats a{Vec3(1, 2, 3), Vec3(0.1, 0.2, 0.3), false};
  LabStats b{Vec3(3, 4, 5), Vec3(0.3, 0.4, 0.5), false};
  const std::vector<LabStats> v{a, b};
  const LabStats p = pool_stats(v);
  CHECK(p.mean == Vec3(2, 3, 4));
  CHECK((p.std - Vec3(0.2, 0.3, 0.4)).norm() < 1e-15);
  const LabStats back = lab_stats_from_json(to_json(p));
  CHECK((back.mean - p.mean).norm() < 1e-8);
  CHECK((back.std - p.std).norm() < 1e-8);
  CHECK_THROWS_AS(lab_stats_from_json(R"({"mean":[0,0,0],"std":[0,1,1]})"), Error);
}

}  // TEST_SUITE
