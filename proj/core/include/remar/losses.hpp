#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "remar/ssim.hpp"
#include "remar/tensor.hpp"

namespace remar {

/// Which reconstruction terms are active and how they are weighted.
struct LossSpec {
  bool use_l1w = true;
  bool use_ssim = false;
  bool use_msssim = false;
  bool use_mse = false;
  bool use_ffl = false;

  // Per-pixel weights for the weighted L1 term.
  double w_inside = 100.0;
  double w_outside = 0.1;
  double w_clean = 1.0;

  double ffl_alpha = 0.5;
  double ffl_beta = 1.0;

  std::size_t msssim_scales = 3;

  // Multipliers applied when summing terms.
  double coef_l1w = 1.0;
  double coef_ssim = 1.0;
  double coef_msssim = 1.0;
  double coef_mse = 1.0;
  double coef_ffl = 1.0;

  void validate() const;
  /// Short label such as "l1+ssim+ffl".
  std::string label() const;

  /// Parses a label produced by label().
  static LossSpec from_label(const std::string& label);
};

/// The six loss combinations compared in the loss ablation grid.
std::vector<LossSpec> table1_loss_presets();

/// Artifact slices get w_inside / w_outside by body mask, clean slices get
/// w_clean everywhere.
std::vector<double> make_weight_map(std::span<const std::uint8_t> mask, bool is_artifact,
                                    const LossSpec& spec);

Tensor l1_weighted(const Tensor& recon, const Tensor& target, const Tensor& weights);
Tensor mse_loss(const Tensor& recon, const Tensor& target);
Tensor ssim_loss(const Tensor& recon, const Tensor& target, const SsimOptions& opts = {});

inline constexpr std::array<double, 5> kMsSsimWeights = {0.0448, 0.2856, 0.3001, 0.2363,
                                                         0.1333};

/// First `scales` canonical weights renormalized to sum to one.
std::vector<double> msssim_weights(std::size_t scales);

/// 1 - MS-SSIM. Scales 1..S-1 contribute the contrast-structure term, scale S
/// the full SSIM; 2x2 mean pooling between scales. Per-scale terms are
/// clamped below at kMsSsimFloor before exponentiation.
inline constexpr double kMsSsimFloor = 1e-6;
Tensor msssim_loss(const Tensor& recon, const Tensor& target, std::size_t scales = 3,
                   const SsimOptions& opts = {});

/// Focal frequency loss on square planes:
///   beta / d^2 * sum_{u,v} z(u,v) |F_recon(u,v) - F_target(u,v)|^2
/// with z = |F_diff|^alpha normalized by its per-plane maximum (z = 0 when the
/// spectra agree) and excluded from differentiation. Averaged over planes.
Tensor ffl_loss(const Tensor& recon, const Tensor& target, double alpha, double beta);

/// The normalized spectrum weights z(u,v) used by ffl_loss, shape of recon.
Tensor ffl_focus(const Tensor& recon, const Tensor& target, double alpha);
/// ffl_loss with caller-supplied spectrum weights.
Tensor ffl_loss_with_focus(const Tensor& recon, const Tensor& target, const Tensor& focus,
                           double beta);

struct LossTerm {
  std::string name;
  Tensor value;
};

struct LossBreakdown {
  Tensor total;
  std::vector<LossTerm> terms;
};

LossBreakdown total_loss(const Tensor& recon, const Tensor& target, const Tensor& weights,
                         const LossSpec& spec);

}  // namespace remar
