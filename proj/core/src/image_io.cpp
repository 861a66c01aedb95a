#include "remar/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace remar {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

std::vector<std::uint8_t> window_to_gray(std::span<const double> hu, double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("window_to_gray: window must satisfy hi > lo");
  std::vector<std::uint8_t> out(hu.size());
  for (std::size_t i = 0; i < hu.size(); ++i) {
    const double t = (std::clamp(hu[i], lo, hi) - lo) / (hi - lo);
    out[i] = static_cast<std::uint8_t>(std::lround(t * 255.0));
  }
  return out;
}

void write_png_gray(const std::filesystem::path& path, std::size_t width, std::size_t height,
                    std::span<const std::uint8_t> pixels) {
  if (pixels.size() != width * height) throw std::invalid_argument("write_png_gray: size mismatch");
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + y * width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

GrayImage read_png_gray(const std::filesystem::path& path) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng failed reading " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  GrayImage img;
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error(path.string() + " is not an 8-bit grayscale PNG");
  }
  img.pixels.resize(img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + y * img.width, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_panels_png(const std::filesystem::path& path, std::size_t size,
                      const std::vector<std::vector<double>>& panels_hu) {
  if (panels_hu.empty()) throw std::invalid_argument("write_panels_png: no panels");
  const std::size_t width = size * panels_hu.size();
  std::vector<std::uint8_t> canvas(width * size);
  for (std::size_t p = 0; p < panels_hu.size(); ++p) {
    if (panels_hu[p].size() != size * size) {
      throw std::invalid_argument("write_panels_png: panel " + std::to_string(p) + " is not " +
                                  std::to_string(size) + "x" + std::to_string(size));
    }
    const auto gray = window_to_gray(panels_hu[p]);
    for (std::size_t y = 0; y < size; ++y) {
      std::copy_n(gray.begin() + static_cast<long>(y * size), size,
                  canvas.begin() + static_cast<long>(y * width + p * size));
    }
  }
  write_png_gray(path, width, size, canvas);
}

}  // namespace remar
