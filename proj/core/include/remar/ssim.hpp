#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "remar/tensor.hpp"

namespace remar {

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  // Intensities live in [-1, 1].
  double data_range = 2.0;
  double k1 = 0.01;
  double k2 = 0.03;

  double c1() const { return (k1 * data_range) * (k1 * data_range); }
  double c2() const { return (k2 * data_range) * (k2 * data_range); }
};

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
std::vector<double> gaussian_taps(std::size_t size, double sigma);

/// Per-window SSIM and contrast-structure maps over valid window positions
/// only. Map entry (i, j) belongs to the window whose top-left pixel is
/// (i, j); its center is (i + window/2, j + window/2).
struct SsimMaps {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> ssim;
  std::vector<double> cs;
};

SsimMaps ssim_maps(std::span<const double> x, std::span<const double> y, std::size_t height,
                   std::size_t width, const SsimOptions& opts = {});

enum class SsimComponent { Full, ContrastStructure };

/// Differentiable mean SSIM (or mean contrast-structure term) over valid
/// windows of every [B,C] plane, averaged over planes. Returns shape [1].
Tensor ssim_index(const Tensor& x, const Tensor& y, const SsimOptions& opts = {},
                  SsimComponent component = SsimComponent::Full);

}  // namespace remar
