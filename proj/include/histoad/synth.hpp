#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "histoad/eval.hpp"
#include "histoad/features.hpp"
#include "histoad/tiler.hpp"

namespace histoad {

/// Gaussian feature pools with diagonal covariance:
///   normal    ~ N(mu0, S)          anomalous ~ N(mu0 + delta, S)
///   near OE   ~ N(mu0 + delta/2, S) far OE   ~ N(mu_far, S)
/// Empty vectors select defaults: mu0 = 0, S = I, delta = shift_norm/sqrt(D)
/// in every coordinate, mu_far = mu0 + far_distance * alternating-sign unit
/// vector.
struct SynthSpec {
  int dim = 16;
  int n_normal = 2000;
  int n_anomalous = 200;
  int n_near_oe = 1000;
  int n_far_oe = 1000;
  /// Extra normal draws tagged for evaluation (tissue_class eval).
  int n_heldout_normal = 0;
  Eigen::VectorXd normal_mean;
  Eigen::VectorXd stddev;
  Eigen::VectorXd shift;
  double shift_norm = 4.0;
  Eigen::VectorXd far_mean;
  double far_distance = 20.0;
  /// Patches are grouped into slides of this many rows.
  int patches_per_slide = 20;
  /// Share of anomalous-distribution rows per anomalous slide; the rest of
  /// the slide is filled with normal draws labeled normal.
  double anomaly_fraction_per_slide = 1.0;
  std::vector<std::string> diagnosis_groups = {"neoplastic", "inflammatory"};
  std::uint64_t seed = 0;

  Eigen::VectorXd resolved_mean() const;
  Eigen::VectorXd resolved_stddev() const;
  Eigen::VectorXd resolved_shift() const;
  Eigen::VectorXd resolved_far_mean() const;
  void validate() const;
};

SynthSpec synth_spec_from_json(const std::string& text);
std::string to_json(const SynthSpec& spec);

struct SynthPools {
  FeatureMatrix normal;
  FeatureMatrix anomalous;  // anomalous slides (may include normal filler rows)
  FeatureMatrix near_oe;
  FeatureMatrix far_oe;
  FeatureMatrix heldout_normal;
  /// Diagnosis group of each anomalous slide.
  std::map<std::string, std::string> slide_group;
};

/// Pools use independent streams split from the seed (stream id = pool
/// index), so each pool depends only on the seed and its own size.
SynthPools gen_features(const SynthSpec& spec);

struct RasterRegion {
  /// "tissue" or an annotation kind (diagnosis_defining, other_anomalous,
  /// artifact). Every region is tissue in the ground-truth mask.
  std::string kind = "tissue";
  int x = 0, y = 0, width = 0, height = 0;
  std::array<std::uint8_t, 3> color{200, 80, 120};
};

struct RasterLayout {
  std::string slide_id = "synth";
  int width = 0;
  int height = 0;
  std::array<std::uint8_t, 3> background{255, 255, 255};
  std::vector<RasterRegion> regions;  // painted in order
  /// Uniform per-channel jitter in [-noise, noise] on region pixels.
  int noise = 0;
  std::uint64_t seed = 0;
};

std::array<std::uint8_t, 3> default_region_color(const std::string& kind);
RasterLayout raster_layout_from_json(const std::string& text);

struct SynthSlide {
  SlideRaster raster;
  TissueMask mask;
  std::vector<Annotation> annotations;
};

/// Overlapping annotated regions of different kinds are rejected.
SynthSlide gen_raster(const RasterLayout& layout);

}  // namespace histoad
