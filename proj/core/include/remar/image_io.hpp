#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace remar {

/// Linear window: lo maps to 0 (black), hi to 255 (white), clamped outside.
std::vector<std::uint8_t> window_to_gray(std::span<const double> hu, double lo = -1000.0,
                                         double hi = 1000.0);

void write_png_gray(const std::filesystem::path& path, std::size_t width, std::size_t height,
                    std::span<const std::uint8_t> pixels);

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};
GrayImage read_png_gray(const std::filesystem::path& path);

/// Square HU panels placed side by side, 8-bit with the HU display window.
void write_panels_png(const std::filesystem::path& path, std::size_t size,
                      const std::vector<std::vector<double>>& panels_hu);

}  // namespace remar
