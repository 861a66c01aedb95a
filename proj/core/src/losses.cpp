#include "remar/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "remar/ops.hpp"

namespace remar {

void LossSpec::validate() const {
  if (!(use_l1w || use_ssim || use_msssim || use_mse || use_ffl)) {
    throw std::invalid_argument("loss spec: at least one term must be active");
  }
  if (w_inside < 0 || w_outside < 0 || w_clean < 0) {
    throw std::invalid_argument("loss spec: L1 weights must be non-negative");
  }
  if (ffl_alpha < 0 || ffl_beta < 0) {
    throw std::invalid_argument("loss spec: ffl alpha and beta must be non-negative");
  }
  if (msssim_scales < 1 || msssim_scales > kMsSsimWeights.size()) {
    throw std::invalid_argument("loss spec: msssim_scales must be in [1, 5]");
  }
}

std::string LossSpec::label() const {
  std::string out;
  auto append = [&out](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += "+";
    out += name;
  };
  append(use_l1w, "l1");
  append(use_ssim, "ssim");
  append(use_msssim, "msssim");
  append(use_mse, "mse");
  append(use_ffl, "ffl");
  return out;
}

LossSpec LossSpec::from_label(const std::string& label) {
  LossSpec spec;
  spec.use_l1w = false;
  std::stringstream ss(label);
  std::string item;
  while (std::getline(ss, item, '+')) {
    if (item == "l1") {
      spec.use_l1w = true;
    } else if (item == "ssim") {
      spec.use_ssim = true;
    } else if (item == "msssim") {
      spec.use_msssim = true;
    } else if (item == "mse") {
      spec.use_mse = true;
    } else if (item == "ffl") {
      spec.use_ffl = true;
    } else {
      throw std::invalid_argument("unknown loss term '" + item + "' in '" + label + "'");
    }
  }
  spec.validate();
  return spec;
}

std::vector<LossSpec> table1_loss_presets() {
  std::vector<LossSpec> out;
  for (const char* label : {"l1", "l1+ssim", "l1+msssim", "l1+mse", "l1+ffl", "l1+ssim+ffl"}) {
    out.push_back(LossSpec::from_label(label));
  }
  return out;
}

std::vector<double> make_weight_map(std::span<const std::uint8_t> mask, bool is_artifact,
                                    const LossSpec& spec) {
  std::vector<double> w(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    w[i] = is_artifact ? (mask[i] ? spec.w_inside : spec.w_outside) : spec.w_clean;
  }
  return w;
}

namespace {

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) throw std::invalid_argument(std::string(op) + ": undefined");
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
}

}  // namespace

Tensor l1_weighted(const Tensor& recon, const Tensor& target, const Tensor& weights) {
  require_same("l1_weighted", recon, target);
  require_same("l1_weighted", recon, weights);
  return ops::mean(ops::mul(ops::abs(ops::sub(recon, target)), weights));
}

Tensor mse_loss(const Tensor& recon, const Tensor& target) {
  require_same("mse_loss", recon, target);
  return ops::mean(ops::square(ops::sub(recon, target)));
}

Tensor ssim_loss(const Tensor& recon, const Tensor& target, const SsimOptions& opts) {
  require_same("ssim_loss", recon, target);
  return ops::add_scalar(ops::scalar_mul(ssim_index(recon, target, opts), -1.0), 1.0);
}

std::vector<double> msssim_weights(std::size_t scales) {
  if (scales < 1 || scales > kMsSsimWeights.size()) {
    throw std::invalid_argument("msssim: scale count must be in [1, 5]");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < scales; ++i) total += kMsSsimWeights[i];
  std::vector<double> w(scales);
  for (std::size_t i = 0; i < scales; ++i) w[i] = kMsSsimWeights[i] / total;
  return w;
}

Tensor msssim_loss(const Tensor& recon, const Tensor& target, std::size_t scales,
                   const SsimOptions& opts) {
  require_same("msssim_loss", recon, target);
  if (recon.rank() != 4) throw std::invalid_argument("msssim_loss: expected [B,C,H,W]");
  const auto weights = msssim_weights(scales);
  std::size_t h = recon.dim(2);
  std::size_t w = recon.dim(3);
  for (std::size_t s = 0; s < scales; ++s) {
    if (h < opts.window || w < opts.window || (s + 1 < scales && (h % 2 || w % 2))) {
      throw std::invalid_argument("msssim_loss: input " + shape_to_string(recon.shape()) +
                                  " too small for " + std::to_string(scales) + " scales");
    }
    h /= 2;
    w /= 2;
  }

  Tensor x = recon;
  Tensor y = target;
  Tensor product;
  for (std::size_t s = 0; s < scales; ++s) {
    const bool last = s + 1 == scales;
    Tensor term = ssim_index(x, y, opts,
                             last ? SsimComponent::Full : SsimComponent::ContrastStructure);
    term = ops::pow(ops::clamp_min(term, kMsSsimFloor), weights[s]);
    product = product.defined() ? ops::mul(product, term) : term;
    if (!last) {
      x = ops::avg_pool2x(x);
      y = ops::avg_pool2x(y);
    }
  }
  return ops::add_scalar(ops::scalar_mul(product, -1.0), 1.0);
}

namespace {

void require_square(const Tensor& recon) {
  if (recon.rank() != 4) throw std::invalid_argument("ffl_loss: expected [B,C,H,W]");
  if (recon.dim(3) != recon.dim(2)) {
    throw std::invalid_argument("ffl_loss: planes must be square, got " +
                                shape_to_string(recon.shape()));
  }
}

Tensor spectrum_distance(const Tensor& recon, const Tensor& target) {
  const auto fr = ops::dft2d(recon);
  const auto ft = ops::dft2d(target);
  return ops::add(ops::square(ops::sub(fr.real, ft.real)),
                  ops::square(ops::sub(fr.imag, ft.imag)));
}

Tensor focus_from_distance(const Tensor& dist2, double alpha) {
  const std::size_t plane = dist2.dim(2) * dist2.dim(3);
  const std::size_t planes = dist2.numel() / plane;
  std::vector<double> z(dist2.numel(), 0.0);
  const auto dv = dist2.data();
  for (std::size_t p = 0; p < planes; ++p) {
    double peak = 0.0;
    for (std::size_t i = 0; i < plane; ++i) peak = std::max(peak, dv[p * plane + i]);
    if (peak <= 0.0) continue;
    const double zmax = std::pow(std::sqrt(peak), alpha);
    for (std::size_t i = 0; i < plane; ++i) {
      z[p * plane + i] = std::pow(std::sqrt(dv[p * plane + i]), alpha) / zmax;
    }
  }
  return Tensor(dist2.shape(), std::move(z));
}

}  // namespace

Tensor ffl_focus(const Tensor& recon, const Tensor& target, double alpha) {
  require_same("ffl_loss", recon, target);
  require_square(recon);
  return focus_from_distance(spectrum_distance(recon.detach(), target.detach()), alpha);
}

Tensor ffl_loss_with_focus(const Tensor& recon, const Tensor& target, const Tensor& focus,
                           double beta) {
  require_same("ffl_loss", recon, target);
  require_same("ffl_loss", recon, focus);
  require_square(recon);
  // Mean over every bin is the per-plane 1/d^2 sum averaged over planes.
  return ops::scalar_mul(ops::mean(ops::mul(spectrum_distance(recon, target), focus)), beta);
}

Tensor ffl_loss(const Tensor& recon, const Tensor& target, double alpha, double beta) {
  require_same("ffl_loss", recon, target);
  require_square(recon);
  const Tensor dist2 = spectrum_distance(recon, target);
  const Tensor focus = focus_from_distance(dist2, alpha);
  return ops::scalar_mul(ops::mean(ops::mul(dist2, focus)), beta);
}

LossBreakdown total_loss(const Tensor& recon, const Tensor& target, const Tensor& weights,
                         const LossSpec& spec) {
  spec.validate();
  LossBreakdown out;
  auto push = [&out](const char* name, double coef, Tensor value) {
    out.terms.push_back({name, value});
    Tensor scaled = coef == 1.0 ? value : ops::scalar_mul(value, coef);
    out.total = out.total.defined() ? ops::add(out.total, scaled) : scaled;
  };
  if (spec.use_l1w) push("l1w", spec.coef_l1w, l1_weighted(recon, target, weights));
  if (spec.use_ssim) push("ssim", spec.coef_ssim, ssim_loss(recon, target));
  if (spec.use_msssim) {
    push("msssim", spec.coef_msssim, msssim_loss(recon, target, spec.msssim_scales));
  }
  if (spec.use_mse) push("mse", spec.coef_mse, mse_loss(recon, target));
  if (spec.use_ffl) {
    push("ffl", spec.coef_ffl, ffl_loss(recon, target, spec.ffl_alpha, spec.ffl_beta));
  }
  return out;
}

}  // namespace remar
