#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>

#include "histoad/tiler.hpp"

namespace histoad {

/// Reinhard colour transfer. Pixels travel RGB -> LMS -> log10 -> l-alpha-beta;
/// statistics are matched per channel there and mapped back.
namespace reinhard {

/// RGB -> LMS cone space (Reinhard et al. 2001).
inline const Eigen::Matrix3d kRgbToLms = (Eigen::Matrix3d() <<
    0.3811, 0.5783, 0.0402,
    0.1967, 0.7244, 0.0782,
    0.0241, 0.1288, 0.8444).finished();

/// log-LMS -> l-alpha-beta: diag(1/sqrt3, 1/sqrt6, 1/sqrt2) * [[1,1,1],[1,1,-2],[1,-1,0]].
const Eigen::Matrix3d& log_lms_to_lab();
/// Exact inverses of the two forward matrices.
const Eigen::Matrix3d& lms_to_rgb();
const Eigen::Matrix3d& lab_to_log_lms();

inline constexpr double kLogFloor = 1e-6;
inline constexpr double kStdEpsilon = 1e-6;

}  // namespace reinhard

using Vec3 = Eigen::Vector3d;

/// Per-channel statistics in l-alpha-beta space.
struct LabStats {
  Vec3 mean = Vec3::Zero();
  Vec3 std = Vec3::Ones();
  /// Set by compute_stats when any channel had (near) zero spread and its std
  /// was clamped to the epsilon. Not serialized.
  bool std_clamped = false;

  void validate() const;
};

Vec3 rgb_to_lab(const Vec3& rgb);
/// Unclamped inverse; the result can leave [0, 255].
Vec3 lab_to_rgb(const Vec3& lab);

/// Statistics over all pixels, or over tissue pixels when a mask is given.
/// At least two pixels must be selected.
LabStats compute_stats(const SlideRaster& image, const TissueMask* mask = nullptr);

/// Per-pixel lab values after matching, before the mapping back to RGB.
/// Rows are pixels in raster order.
Eigen::Matrix<double, Eigen::Dynamic, 3> normalize_to_lab(
    const SlideRaster& image, const LabStats& source, const LabStats& target);

/// Full transform with rounding and clamping to [0, 255].
SlideRaster normalize(const SlideRaster& image, const LabStats& source,
                      const LabStats& target);

/// Source statistics are computed per patch.
inline SlideRaster normalize(const SlideRaster& image, const LabStats& target) {
  return normalize(image, compute_stats(image), target);
}

/// Statistics of an lab point cloud (rows = pixels), population std.
LabStats lab_point_stats(const Eigen::Ref<const Eigen::Matrix<double, Eigen::Dynamic, 3>>& lab);

/// Normalization target: element-wise mean of per-slide means and stds.
LabStats pool_stats(std::span<const LabStats> per_slide);

/// `{"mean":[l,a,b],"std":[l,a,b]}` with 9 significant digits.
std::string to_json(const LabStats& stats);
LabStats lab_stats_from_json(const std::string& text);

}  // namespace histoad
