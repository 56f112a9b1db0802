#pragma once
// Brute-force reference implementations used by the tests. They share no
// code with the library beyond plain data types.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace oracle {

/// Fraction of (anomalous, normal) pairs ordered correctly, ties count half.
inline double pairwise_auroc(const std::vector<double>& s, const std::vector<bool>& anomalous) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!anomalous[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (anomalous[j]) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

/// Sort descending, average the first max(1, ceil(f n)).
inline double top_fraction_mean(std::vector<double> s, double f) {
  std::sort(s.begin(), s.end(), [](double a, double b) { return a > b; });
  std::size_t m = static_cast<std::size_t>(std::ceil(f * static_cast<double>(s.size())));
  m = std::max<std::size_t>(1, std::min(m, s.size()));
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) sum += s[i];
  return sum / static_cast<double>(m);
}

/// Number of windows along one axis found by walking the grid.
inline int walk_positions(int extent, int patch, int stride) {
  int n = 0;
  for (int x = 0; x + patch <= extent; x += stride) ++n;
  return n;
}

struct Window {
  int x, y;
  double score;
};

/// Per-pixel average over every window covering the pixel, summing windows
/// in the given order; NaN where no window covers it.
inline std::vector<double> pixel_average(int width, int height, int patch,
                                         const std::vector<Window>& windows) {
  std::vector<double> out(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double sum = 0.0;
      int count = 0;
      for (const auto& w : windows)
        if (x >= w.x && x < w.x + patch && y >= w.y && y < w.y + patch) {
          sum += w.score;
          ++count;
        }
      out[static_cast<std::size_t>(y) * width + x] = count ? sum / count : std::nan("");
    }
  return out;
}

/// Smallest-sample threshold search: for every candidate t among the
/// anomalous scores, sensitivity = #{a >= t}/N; pick the largest t reaching
/// the target and report #{n < t}/M.
inline std::pair<double, double> threshold_scan(const std::vector<double>& anomalous,
                                                const std::vector<double>& normal,
                                                double target) {
  double best = -INFINITY;
  for (double t : anomalous) {
    std::size_t hit = 0;
    for (double a : anomalous) hit += a >= t;
    if (static_cast<double>(hit) / anomalous.size() >= target) best = std::max(best, t);
  }
  std::size_t below = 0;
  for (double n : normal) below += n < best;
  return {best, static_cast<double>(below) / normal.size()};
}

inline std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("histoad_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace oracle
