#include "histoad/image_io.hpp"

#include <png.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "histoad/error.hpp"

namespace histoad {

namespace {

bool has_png_signature(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  return in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

std::vector<std::uint8_t> read_png(const std::string& path,
                                   std::uint32_t format, int& width,
                                   int& height) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    fail(ErrorCode::io, path + ": " + image.message);
  image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorCode::io, path + ": " + image.message);
  }
  width = static_cast<int>(image.width);
  height = static_cast<int>(image.height);
  return buffer;
}

void write_png(const std::string& path, int width, int height,
               std::uint32_t format, const std::uint8_t* data) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, data, 0, nullptr))
    fail(ErrorCode::io, path + ": " + image.message);
}

// Reads one whitespace/comment-delimited token from a PNM header.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {}
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

SlideRaster read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot read " + path);
  require(pnm_token(in) == "P6", ErrorCode::invalid_input,
          path + ": not a binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pnm_token(in));
    h = std::stoi(pnm_token(in));
    maxval = std::stoi(pnm_token(in));
  } catch (const std::exception&) {
    fail(ErrorCode::invalid_input, path + ": malformed PPM header");
  }
  require(maxval == 255, ErrorCode::invalid_input,
          path + ": only 8-bit PPM (maxval 255) is supported");
  require(w >= 1 && h >= 1, ErrorCode::invalid_input, path + ": zero-area image");
  SlideRaster raster;
  raster.width = w;
  raster.height = h;
  raster.pixels.resize(raster.pixel_count() * 3);
  in.read(reinterpret_cast<char*>(raster.pixels.data()),
          static_cast<std::streamsize>(raster.pixels.size()));
  require(static_cast<std::size_t>(in.gcount()) == raster.pixels.size(),
          ErrorCode::truncated_payload, path + ": truncated pixel data");
  return raster;
}

}  // namespace

SlideRaster read_raster(const std::string& path) {
  require(std::filesystem::exists(path), ErrorCode::io,
          "input file not found: " + path);
  SlideRaster raster;
  if (has_png_signature(path)) {
    raster.pixels = read_png(path, PNG_FORMAT_RGB, raster.width, raster.height);
  } else {
    raster = read_ppm(path);
  }
  raster.id = std::filesystem::path(path).stem().string();
  raster.validate();
  return raster;
}

void write_ppm(const std::string& path, const SlideRaster& raster) {
  raster.validate();
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
  out << "P6\n" << raster.width << ' ' << raster.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(raster.pixels.data()),
            static_cast<std::streamsize>(raster.pixels.size()));
}

void write_png_rgb(const std::string& path, const SlideRaster& raster) {
  raster.validate();
  write_png(path, raster.width, raster.height, PNG_FORMAT_RGB,
            raster.pixels.data());
}

void write_png_rgba(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& rgba) {
  require(rgba.size() == static_cast<std::size_t>(width) * height * 4,
          ErrorCode::invalid_input, "RGBA buffer size mismatch");
  write_png(path, width, height, PNG_FORMAT_RGBA, rgba.data());
}

void write_mask_png(const std::string& path, const TissueMask& mask) {
  std::vector<std::uint8_t> gray(mask.bits.size());
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = mask.bits[i] ? 255 : 0;
  write_png(path, mask.width, mask.height, PNG_FORMAT_GRAY, gray.data());
}

TissueMask read_mask_png(const std::string& path) {
  TissueMask mask;
  auto gray = read_png(path, PNG_FORMAT_GRAY, mask.width, mask.height);
  mask.bits.resize(gray.size());
  for (std::size_t i = 0; i < gray.size(); ++i) mask.bits[i] = gray[i] >= 128;
  return mask;
}

RgbaImage read_png_rgba(const std::string& path) {
  RgbaImage img;
  img.pixels = read_png(path, PNG_FORMAT_RGBA, img.width, img.height);
  return img;
}

}  // namespace histoad
