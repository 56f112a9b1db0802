#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "histoad/tiler.hpp"

namespace histoad {

/// Loads a PNG (any bit depth/colour type, converted to 8-bit RGB) or a
/// binary PPM (P6, maxval 255). The slide id defaults to the file stem.
SlideRaster read_raster(const std::string& path);

void write_ppm(const std::string& path, const SlideRaster& raster);
void write_png_rgb(const std::string& path, const SlideRaster& raster);
void write_png_rgba(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& rgba);
/// 0 = background, 255 = tissue.
void write_mask_png(const std::string& path, const TissueMask& mask);
TissueMask read_mask_png(const std::string& path);

struct RgbaImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};
RgbaImage read_png_rgba(const std::string& path);

}  // namespace histoad
