#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "remar/ops.hpp"
#include "remar/tensor.hpp"

namespace remar {

/// Architecture hyperparameters plus the three ablation switches.
struct ModelConfig {
  std::size_t levels = 4;
  std::size_t base_channels = 16;
  std::size_t input_channels = 1;
  std::size_t kernel_size = 3;
  double sigma_k = 0.01;
  double sigma_l_init = 0.01;
  bool use_rcsse = true;
  bool use_noise = true;
  bool use_enresb = true;
  std::size_t se_reduction = 2;
  std::size_t num_enresb = 2;

  void validate() const;
  /// Channel width at encoder level 1..levels.
  std::size_t channels_at(std::size_t level) const;
  /// Rejects inputs whose sides are not divisible by 2^(levels-1).
  void check_input(std::size_t height, std::size_t width) const;

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);

  bool operator==(const ModelConfig&) const = default;
};

/// Ablation variants: "full" and "+", "++", "+++", "++++" (RcsSE removed,
/// noise removed, both removed, both removed with plain residual blocks).
struct AblationPreset {
  std::string name;
  ModelConfig config;
};
std::vector<AblationPreset> ablation_presets(const ModelConfig& base);
ModelConfig apply_variant(const ModelConfig& base, const std::string& variant);

/// Exact learnable-parameter count from per-layer closed forms.
std::size_t parameter_count(const ModelConfig& config);

// Closed forms shared by parameter_count and the tests.
std::size_t conv_param_count(std::size_t cin, std::size_t cout, std::size_t k, bool bias = true);
std::size_t cbr_param_count(std::size_t cin, std::size_t cout, std::size_t k);
std::size_t residual_block_param_count(std::size_t channels, std::size_t k, bool separable);
std::size_t rcsse_param_count(std::size_t channels, std::size_t reduction);

struct NamedBuffer {
  std::string name;
  std::shared_ptr<ops::BatchNormStats> stats;
};

/// Parameter initialization: fan-in scaled normal weights, zero biases.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  Tensor weight(Shape shape, std::size_t fan_in);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

 private:
  std::mt19937_64 rng_;
};

/// Conv -> BatchNorm -> ReLU.
class CbrLayer {
 public:
  CbrLayer(ParameterStore& store, std::vector<NamedBuffer>& buffers, const std::string& prefix,
           std::size_t cin, std::size_t cout, std::size_t k, int stride, Initializer& init);
  Tensor forward(const Tensor& x, Mode mode) const;

 private:
  Tensor weight_, bias_, gamma_, beta_;
  std::shared_ptr<ops::BatchNormStats> stats_;
  int stride_;
  int padding_;
};

/// Residual block x + block(x), block = [spatial conv -> BN -> ReLU] x 2.
/// The separable form uses depthwise k x k followed by pointwise 1x1
/// convolutions; the plain form uses full k x k convolutions.
class ResidualBlock {
 public:
  ResidualBlock(ParameterStore& store, std::vector<NamedBuffer>& buffers,
                const std::string& prefix, std::size_t channels, std::size_t k, bool separable,
                Initializer& init);
  Tensor forward(const Tensor& x, Mode mode) const;

 private:
  struct Stage {
    Tensor dw_weight, dw_bias, pw_weight, pw_bias;  // separable
    Tensor weight, bias;                            // plain
    Tensor gamma, beta;
    std::shared_ptr<ops::BatchNormStats> stats;
  };
  std::vector<Stage> stages_;
  bool separable_;
  int padding_;
};

/// Concurrent spatial and channel squeeze-and-excitation:
///   out = f * sigma(fc2(relu(fc1(gap(f))))) + f * sigma(conv1x1(f))
class RcsSEBlock {
 public:
  RcsSEBlock(ParameterStore& store, const std::string& prefix, std::size_t channels,
             std::size_t reduction, Initializer& init);
  Tensor forward(const Tensor& f) const;

  /// Spatial attention map sigma(q), [B,1,H,W].
  Tensor spatial_gate(const Tensor& f) const;
  /// Channel gates sigma(z), [B,C].
  Tensor channel_gate(const Tensor& f) const;

 private:
  Tensor spatial_weight_, spatial_bias_;
  Tensor fc1_weight_, fc1_bias_, fc2_weight_, fc2_bias_;
  std::size_t channels_;
};

/// Encoder-decoder with recalibrated skips and dual noise injection.
class ReMarNet {
 public:
  explicit ReMarNet(const ModelConfig& config, std::uint64_t init_seed = 0);
  ReMarNet(const ReMarNet&) = delete;
  ReMarNet& operator=(const ReMarNet&) = delete;
  ReMarNet(ReMarNet&&) = default;
  ReMarNet& operator=(ReMarNet&&) = default;

  /// Encoder features for levels 1..L (no bottleneck blocks).
  std::vector<Tensor> encode(const Tensor& x, std::uint64_t noise_seed, Mode mode) const;
  /// [B,1,H,W] -> [B,1,H,W]. Noise is drawn only in train mode with use_noise.
  Tensor forward(const Tensor& x, std::uint64_t noise_seed, Mode mode) const;

  /// Skip tensor for encoder level l (1-based, l < L): F + RcsSE(F), or F.
  Tensor skip(std::size_t level, const Tensor& feature) const;
  const RcsSEBlock& rcsse(std::size_t level) const { return rcsse_.at(level - 1); }
  const ResidualBlock& bottleneck_block(std::size_t i) const { return bottleneck_.at(i); }

  /// The input after noise injection; identical to x outside train mode.
  Tensor perturb_input(const Tensor& x, std::mt19937_64& rng, Mode mode) const;

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }
  const std::vector<NamedBuffer>& buffers() const { return buffers_; }
  /// Learnable latent noise scale, undefined when use_noise is false.
  const Tensor& sigma_l() const { return sigma_l_; }

  using State = std::map<std::string, std::vector<double>>;
  State state() const;
  void load_state(const State& state);

 private:
  std::vector<Tensor> encode_impl(const Tensor& x, std::mt19937_64& rng, Mode mode) const;

  ModelConfig config_;
  ParameterStore params_;
  std::vector<NamedBuffer> buffers_;
  std::vector<std::vector<CbrLayer>> encoder_;
  std::vector<ResidualBlock> bottleneck_;
  std::vector<RcsSEBlock> rcsse_;
  // Decoder stage for level l (index l-1): upsampling CBR then two CBRs.
  std::vector<std::vector<CbrLayer>> decoder_;
  Tensor head_weight_, head_bias_;
  Tensor sigma_l_;
};

}  // namespace remar
