#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "histoad/error.hpp"

namespace histoad {

inline constexpr int kDefaultPatchSize = 340;
inline constexpr int kHeatmapOverlap = 75;
inline constexpr double kDefaultMaxBackgroundFraction = 0.80;

/// 8-bit RGB raster, row-major, interleaved. Stands in for a whole-slide
/// image at a single magnification; patches are rasters too.
struct SlideRaster {
  std::string id;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
  double mpp = 0.5;

  SlideRaster() = default;
  SlideRaster(std::string slide_id, int w, int h);

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
  std::uint8_t* at(int x, int y) {
    return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
  void fill_rect(int x, int y, int w, int h, std::uint8_t r, std::uint8_t g,
                 std::uint8_t b);
  /// Throws invalid_input when dimensions and buffer disagree.
  void validate() const;
};

struct TissueMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // 1 = tissue

  TissueMask() = default;
  TissueMask(int w, int h, bool value = false)
      : width(w), height(h),
        bits(static_cast<std::size_t>(w) * static_cast<std::size_t>(h),
             value ? 1 : 0) {}

  bool at(int x, int y) const {
    return bits[static_cast<std::size_t>(y) * width + x] != 0;
  }
  void set(int x, int y, bool v) {
    bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
  }
  std::size_t tissue_count() const;
  void set_rect(int x, int y, int w, int h, bool v);

  friend bool operator==(const TissueMask&, const TissueMask&) = default;
};

/// HSV rule: tissue iff saturation > saturation_min and value < value_max,
/// followed by `smoothing_passes` rounds of 3x3 majority vote.
struct TissueDetectConfig {
  double saturation_min = 0.05;
  double value_max = 0.98;
  int smoothing_passes = 1;
};

struct TileSpec {
  int patch_size = kDefaultPatchSize;
  int stride = kDefaultPatchSize;
  double max_background_fraction = kDefaultMaxBackgroundFraction;

  /// Overlapping grid used for heatmaps: stride = patch_size - 75.
  static TileSpec heatmap(int patch_size = kDefaultPatchSize) {
    return {patch_size, patch_size - kHeatmapOverlap,
            kDefaultMaxBackgroundFraction};
  }
  void validate() const;
};

struct PatchCoord {
  std::string slide_id;
  int x = 0;
  int y = 0;

  friend bool operator==(const PatchCoord&, const PatchCoord&) = default;
  friend auto operator<=>(const PatchCoord&, const PatchCoord&) = default;
};

/// Per-pixel tissue rule without smoothing.
bool is_tissue_pixel(std::uint8_t r, std::uint8_t g, std::uint8_t b,
                     const TissueDetectConfig& config);

TissueMask detect_tissue(const SlideRaster& raster,
                         const TissueDetectConfig& config = {});

/// One 3x3 majority-vote pass. Ties (possible only at borders, where fewer
/// than nine neighbours exist) keep the current value.
TissueMask majority_smooth(const TissueMask& mask);

double background_fraction(const TissueMask& mask, const PatchCoord& coord,
                           int patch_size);

/// Number of grid positions along one axis: floor((extent - patch) / stride) + 1,
/// or 0 when the patch does not fit.
int grid_positions(int extent, int patch_size, int stride);

/// Row-major list of grid patches whose background fraction does not exceed
/// the configured maximum (a patch at exactly the maximum is kept).
std::vector<PatchCoord> enumerate_patches(const TissueMask& mask,
                                          const TileSpec& spec,
                                          const std::string& slide_id = {});

SlideRaster extract_patch(const SlideRaster& raster, const PatchCoord& coord,
                          int patch_size);

void write_patch_csv(const std::string& path,
                     const std::vector<PatchCoord>& coords);
std::vector<PatchCoord> read_patch_csv(const std::string& path);

}  // namespace histoad
