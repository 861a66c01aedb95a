#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "remar/ssim.hpp"
#include "remar/tensor.hpp"

namespace remar {

// Brute-force references written straight from the defining formulas.
namespace oracle {

struct Spectrum {
  std::vector<double> real, imag;
};
/// O(N^2 M^2) direct DFT of one H x W plane.
Spectrum direct_dft(std::span<const double> x, std::size_t h, std::size_t w);

/// Mean SSIM over valid windows, evaluating the 2D Gaussian window directly.
/// With `mask`, only windows whose center pixel is set are averaged.
double ssim(std::span<const double> x, std::span<const double> y, std::size_t h, std::size_t w,
            const SsimOptions& opts = {}, std::span<const std::uint8_t> mask = {},
            bool contrast_structure = false);
double msssim(std::span<const double> x, std::span<const double> y, std::size_t n,
              std::size_t scales, const SsimOptions& opts = {});
double masked_psnr(std::span<const double> x, std::span<const double> y,
                   std::span<const std::uint8_t> mask, double data_range);
double ffl(std::span<const double> x, std::span<const double> y, std::size_t n, double alpha,
           double beta);

}  // namespace oracle

/// Compares reverse-mode gradients of every leaf against central differences.
/// Error per element is |a - n| / max(|a|, |n|, 1e-3 * max|n|, 1e-8).
struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t elements = 0;
};
GradCheck check_gradients(const std::vector<Tensor>& leaves, const std::function<Tensor()>& loss,
                          double step = 1e-6);

struct CheckResult {
  std::string name;
  int criterion = 0;  // acceptance criterion the check belongs to
  bool passed = false;
  double value = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct VerifyOptions {
  std::size_t seeds = 5;
  std::uint64_t base_seed = 1;
  // Scales conv2d's weight gradient to prove the gradient checks can fail.
  bool inject_conv_fault = false;
};

std::vector<CheckResult> gradient_checks(const VerifyOptions& opts = {});
std::vector<CheckResult> oracle_checks(const VerifyOptions& opts = {});
std::vector<CheckResult> invariant_checks(const VerifyOptions& opts = {});
/// All of the above.
std::vector<CheckResult> run_verify(const VerifyOptions& opts = {});

void print_check_table(std::ostream& out, const std::vector<CheckResult>& results);
bool all_passed(const std::vector<CheckResult>& results);

}  // namespace remar
