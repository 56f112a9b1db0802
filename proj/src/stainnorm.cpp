#include "histoad/stainnorm.hpp"

#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "histoad/error.hpp"

namespace histoad {

namespace reinhard {

const Eigen::Matrix3d& log_lms_to_lab() {
  static const Eigen::Matrix3d m = [] {
    Eigen::Matrix3d mix;
    mix << 1, 1, 1, 1, 1, -2, 1, -1, 0;
    const Eigen::Vector3d scale(1.0 / std::sqrt(3.0), 1.0 / std::sqrt(6.0),
                                1.0 / std::sqrt(2.0));
    return Eigen::Matrix3d(scale.asDiagonal() * mix);
  }();
  return m;
}

const Eigen::Matrix3d& lms_to_rgb() {
  static const Eigen::Matrix3d m = kRgbToLms.inverse();
  return m;
}

const Eigen::Matrix3d& lab_to_log_lms() {
  static const Eigen::Matrix3d m = log_lms_to_lab().inverse();
  return m;
}

}  // namespace reinhard

void LabStats::validate() const {
  require(mean.allFinite() && std.allFinite() && (std.array() > 0.0).all(),
          ErrorCode::invalid_input, "LabStats: std components must be positive");
}

Vec3 rgb_to_lab(const Vec3& rgb) {
  Vec3 lms = reinhard::kRgbToLms * rgb;
  for (int c = 0; c < 3; ++c)
    lms[c] = std::log10(std::max(lms[c], reinhard::kLogFloor));
  return reinhard::log_lms_to_lab() * lms;
}

Vec3 lab_to_rgb(const Vec3& lab) {
  Vec3 lms = reinhard::lab_to_log_lms() * lab;
  for (int c = 0; c < 3; ++c) lms[c] = std::pow(10.0, lms[c]);
  return reinhard::lms_to_rgb() * lms;
}

namespace {

Vec3 pixel_vec(const std::uint8_t* p) { return Vec3(p[0], p[1], p[2]); }

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

LabStats lab_point_stats(
    const Eigen::Ref<const Eigen::Matrix<double, Eigen::Dynamic, 3>>& lab) {
  require(lab.rows() >= 2, ErrorCode::invalid_input,
          "stain statistics need at least two pixels");
  LabStats stats;
  stats.mean = lab.colwise().mean().transpose();
  const auto centered = lab.rowwise() - stats.mean.transpose();
  stats.std = (centered.array().square().colwise().sum() /
               static_cast<double>(lab.rows()))
                  .sqrt()
                  .transpose();
  for (int c = 0; c < 3; ++c) {
    if (!(stats.std[c] > reinhard::kStdEpsilon)) {
      stats.std[c] = reinhard::kStdEpsilon;
      stats.std_clamped = true;
    }
  }
  return stats;
}

LabStats compute_stats(const SlideRaster& image, const TissueMask* mask) {
  image.validate();
  if (mask != nullptr)
    require(mask->width == image.width && mask->height == image.height,
            ErrorCode::dim_mismatch, "mask and raster dimensions differ");
  const std::size_t n = mask ? mask->tissue_count() : image.pixel_count();
  Eigen::Matrix<double, Eigen::Dynamic, 3> lab(static_cast<Eigen::Index>(n), 3);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    if (mask && !mask->bits[i]) continue;
    lab.row(row++) = rgb_to_lab(pixel_vec(image.pixels.data() + 3 * i)).transpose();
  }
  return lab_point_stats(lab);
}

Eigen::Matrix<double, Eigen::Dynamic, 3> normalize_to_lab(
    const SlideRaster& image, const LabStats& source, const LabStats& target) {
  image.validate();
  source.validate();
  target.validate();
  const Vec3 gain = target.std.cwiseQuotient(source.std);
  Eigen::Matrix<double, Eigen::Dynamic, 3> lab(
      static_cast<Eigen::Index>(image.pixel_count()), 3);
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    const Vec3 in = rgb_to_lab(pixel_vec(image.pixels.data() + 3 * i));
    lab.row(static_cast<Eigen::Index>(i)) =
        ((in - source.mean).cwiseProduct(gain) + target.mean).transpose();
  }
  return lab;
}

SlideRaster normalize(const SlideRaster& image, const LabStats& source,
                      const LabStats& target) {
  const auto lab = normalize_to_lab(image, source, target);
  SlideRaster out = image;
  for (Eigen::Index i = 0; i < lab.rows(); ++i) {
    const Vec3 rgb = lab_to_rgb(lab.row(i).transpose());
    for (int c = 0; c < 3; ++c) out.pixels[3 * i + c] = quantize(rgb[c]);
  }
  return out;
}

LabStats pool_stats(std::span<const LabStats> per_slide) {
  require(!per_slide.empty(), ErrorCode::invalid_input,
          "pool_stats: no slide statistics given");
  LabStats pooled;
  pooled.mean.setZero();
  pooled.std.setZero();
  for (const auto& s : per_slide) {
    pooled.mean += s.mean;
    pooled.std += s.std;
  }
  pooled.mean /= static_cast<double>(per_slide.size());
  pooled.std /= static_cast<double>(per_slide.size());
  return pooled;
}

std::string to_json(const LabStats& stats) {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  auto vec = [&](const Vec3& v) {
    return "[" + fmt(v[0]) + "," + fmt(v[1]) + "," + fmt(v[2]) + "]";
  };
  return "{\"mean\":" + vec(stats.mean) + ",\"std\":" + vec(stats.std) + "}";
}

LabStats lab_stats_from_json(const std::string& text) {
  LabStats stats;
  try {
    const auto j = nlohmann::json::parse(text);
    for (int c = 0; c < 3; ++c) {
      stats.mean[c] = j.at("mean").at(c).get<double>();
      stats.std[c] = j.at("std").at(c).get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_input, std::string("LabStats JSON: ") + e.what());
  }
  stats.validate();
  return stats;
}

}  // namespace histoad
