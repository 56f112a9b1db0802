#include "histoad/tiler.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "histoad/error.hpp"

namespace histoad {

SlideRaster::SlideRaster(std::string slide_id, int w, int h)
    : id(std::move(slide_id)), width(w), height(h) {
  require(w >= 1 && h >= 1, ErrorCode::invalid_input,
          "raster dimensions must be positive");
  pixels.assign(pixel_count() * 3, 255);
}

void SlideRaster::fill_rect(int x, int y, int w, int h, std::uint8_t r,
                            std::uint8_t g, std::uint8_t b) {
  const int x1 = std::min(width, x + w);
  const int y1 = std::min(height, y + h);
  for (int yy = std::max(0, y); yy < y1; ++yy) {
    for (int xx = std::max(0, x); xx < x1; ++xx) {
      std::uint8_t* p = at(xx, yy);
      p[0] = r;
      p[1] = g;
      p[2] = b;
    }
  }
}

void SlideRaster::validate() const {
  require(width >= 1 && height >= 1, ErrorCode::invalid_input,
          "raster '" + id + "' has zero area");
  require(pixels.size() == pixel_count() * 3, ErrorCode::invalid_input,
          "raster '" + id + "' pixel buffer does not match width*height*3");
}

std::size_t TissueMask::tissue_count() const {
  return static_cast<std::size_t>(
      std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
}

void TissueMask::set_rect(int x, int y, int w, int h, bool v) {
  const int x1 = std::min(width, x + w);
  const int y1 = std::min(height, y + h);
  for (int yy = std::max(0, y); yy < y1; ++yy)
    for (int xx = std::max(0, x); xx < x1; ++xx) set(xx, yy, v);
}

void TileSpec::validate() const {
  require(patch_size >= 1, ErrorCode::config, "patch_size must be >= 1");
  require(stride >= 1 && stride <= patch_size, ErrorCode::config,
          "stride must satisfy 1 <= stride <= patch_size");
  require(max_background_fraction >= 0.0 && max_background_fraction <= 1.0,
          ErrorCode::config, "max_background_fraction must lie in [0, 1]");
}

bool is_tissue_pixel(std::uint8_t r, std::uint8_t g, std::uint8_t b,
                     const TissueDetectConfig& config) {
  const int hi = std::max({r, g, b});
  const int lo = std::min({r, g, b});
  const double value = hi / 255.0;
  const double saturation = hi == 0 ? 0.0 : static_cast<double>(hi - lo) / hi;
  return saturation > config.saturation_min && value < config.value_max;
}

TissueMask majority_smooth(const TissueMask& mask) {
  TissueMask out(mask.width, mask.height);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      int total = 0;
      int tissue = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= mask.height) continue;
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= mask.width) continue;
          ++total;
          tissue += mask.at(xx, yy) ? 1 : 0;
        }
      }
      if (2 * tissue > total)
        out.set(x, y, true);
      else if (2 * tissue < total)
        out.set(x, y, false);
      else
        out.set(x, y, mask.at(x, y));
    }
  }
  return out;
}

TissueMask detect_tissue(const SlideRaster& raster,
                         const TissueDetectConfig& config) {
  raster.validate();
  TissueMask mask(raster.width, raster.height);
  for (int y = 0; y < raster.height; ++y) {
    for (int x = 0; x < raster.width; ++x) {
      const std::uint8_t* p = raster.at(x, y);
      mask.set(x, y, is_tissue_pixel(p[0], p[1], p[2], config));
    }
  }
  for (int pass = 0; pass < config.smoothing_passes; ++pass)
    mask = majority_smooth(mask);
  return mask;
}

double background_fraction(const TissueMask& mask, const PatchCoord& coord,
                           int patch_size) {
  require(patch_size >= 1 && coord.x >= 0 && coord.y >= 0 &&
              coord.x + patch_size <= mask.width &&
              coord.y + patch_size <= mask.height,
          ErrorCode::invalid_input, "patch window outside mask bounds");
  std::size_t background = 0;
  for (int y = coord.y; y < coord.y + patch_size; ++y)
    for (int x = coord.x; x < coord.x + patch_size; ++x)
      background += mask.at(x, y) ? 0 : 1;
  const double area = static_cast<double>(patch_size) * patch_size;
  return static_cast<double>(background) / area;
}

int grid_positions(int extent, int patch_size, int stride) {
  if (extent < patch_size) return 0;
  return (extent - patch_size) / stride + 1;
}

std::vector<PatchCoord> enumerate_patches(const TissueMask& mask,
                                          const TileSpec& spec,
                                          const std::string& slide_id) {
  spec.validate();
  const int nx = grid_positions(mask.width, spec.patch_size, spec.stride);
  const int ny = grid_positions(mask.height, spec.patch_size, spec.stride);
  std::vector<PatchCoord> coords;
  if (nx == 0 || ny == 0) return coords;

  // Summed-area table of background pixels, (w+1) x (h+1).
  const std::size_t w1 = static_cast<std::size_t>(mask.width) + 1;
  std::vector<std::int64_t> sat(w1 * (static_cast<std::size_t>(mask.height) + 1), 0);
  for (int y = 0; y < mask.height; ++y) {
    std::int64_t row = 0;
    for (int x = 0; x < mask.width; ++x) {
      row += mask.at(x, y) ? 0 : 1;
      sat[(y + 1) * w1 + (x + 1)] = sat[y * w1 + (x + 1)] + row;
    }
  }
  const double area = static_cast<double>(spec.patch_size) * spec.patch_size;
  const int p = spec.patch_size;
  for (int j = 0; j < ny; ++j) {
    const int y = j * spec.stride;
    for (int i = 0; i < nx; ++i) {
      const int x = i * spec.stride;
      const std::int64_t background = sat[(y + p) * w1 + (x + p)] -
                                      sat[y * w1 + (x + p)] -
                                      sat[(y + p) * w1 + x] + sat[y * w1 + x];
      if (static_cast<double>(background) / area > spec.max_background_fraction)
        continue;
      coords.push_back({slide_id, x, y});
    }
  }
  return coords;
}

SlideRaster extract_patch(const SlideRaster& raster, const PatchCoord& coord,
                          int patch_size) {
  require(coord.x >= 0 && coord.y >= 0 &&
              coord.x + patch_size <= raster.width &&
              coord.y + patch_size <= raster.height,
          ErrorCode::invalid_input, "patch window outside raster bounds");
  SlideRaster patch(raster.id, patch_size, patch_size);
  patch.mpp = raster.mpp;
  for (int y = 0; y < patch_size; ++y) {
    const std::uint8_t* src = raster.at(coord.x, coord.y + y);
    std::copy(src, src + 3 * patch_size, patch.at(0, y));
  }
  return patch;
}

void write_patch_csv(const std::string& path,
                     const std::vector<PatchCoord>& coords) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
  out << "slide_id,x,y\n";
  for (const auto& c : coords) out << c.slide_id << ',' << c.x << ',' << c.y << '\n';
}

std::vector<PatchCoord> read_patch_csv(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot read " + path);
  std::string line;
  std::getline(in, line);
  require(line == "slide_id,x,y", ErrorCode::invalid_input,
          path + ": expected header slide_id,x,y");
  std::vector<PatchCoord> coords;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    PatchCoord c;
    std::string x, y;
    std::getline(ss, c.slide_id, ',');
    std::getline(ss, x, ',');
    std::getline(ss, y, ',');
    c.x = std::stoi(x);
    c.y = std::stoi(y);
    coords.push_back(std::move(c));
  }
  return coords;
}

}  // namespace histoad
