#include "remar/network.hpp"

#include <cmath>
#include <stdexcept>

namespace remar {

namespace {

std::size_t parse_size(const std::map<std::string, std::string>& kv, const std::string& key,
                       std::size_t fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : static_cast<std::size_t>(std::stoull(it->second));
}

double parse_double(const std::map<std::string, std::string>& kv, const std::string& key,
                    double fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : std::stod(it->second);
}

bool parse_bool(const std::map<std::string, std::string>& kv, const std::string& key,
                bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw std::invalid_argument("model config: " + key + " must be true or false");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void ModelConfig::validate() const {
  if (levels < 2) throw std::invalid_argument("model config: levels must be >= 2");
  if (base_channels < 1) throw std::invalid_argument("model config: base_channels must be >= 1");
  if (input_channels < 1) throw std::invalid_argument("model config: input_channels must be >= 1");
  if (kernel_size % 2 == 0) throw std::invalid_argument("model config: kernel_size must be odd");
  if (sigma_k < 0) throw std::invalid_argument("model config: sigma_k must be >= 0");
  if (se_reduction < 1) throw std::invalid_argument("model config: se_reduction must be >= 1");
  if (num_enresb < 1) throw std::invalid_argument("model config: num_enresb must be >= 1");
  if (use_rcsse) {
    for (std::size_t l = 1; l < levels; ++l) {
      if (channels_at(l) % se_reduction != 0) {
        throw std::invalid_argument("model config: channels " + std::to_string(channels_at(l)) +
                                    " at level " + std::to_string(l) +
                                    " not divisible by se_reduction " +
                                    std::to_string(se_reduction));
      }
    }
  }
}

std::size_t ModelConfig::channels_at(std::size_t level) const {
  return base_channels << (level - 1);
}

void ModelConfig::check_input(std::size_t height, std::size_t width) const {
  const std::size_t factor = std::size_t{1} << (levels - 1);
  if (height % factor || width % factor) {
    throw std::invalid_argument("input " + std::to_string(height) + "x" + std::to_string(width) +
                                " not divisible by 2^(levels-1) = " + std::to_string(factor));
  }
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {{"levels", std::to_string(levels)},
          {"base_channels", std::to_string(base_channels)},
          {"input_channels", std::to_string(input_channels)},
          {"kernel_size", std::to_string(kernel_size)},
          {"sigma_k", format_double(sigma_k)},
          {"sigma_l_init", format_double(sigma_l_init)},
          {"use_rcsse", use_rcsse ? "true" : "false"},
          {"use_noise", use_noise ? "true" : "false"},
          {"use_enresb", use_enresb ? "true" : "false"},
          {"se_reduction", std::to_string(se_reduction)},
          {"num_enresb", std::to_string(num_enresb)}};
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  c.levels = parse_size(kv, "levels", c.levels);
  c.base_channels = parse_size(kv, "base_channels", c.base_channels);
  c.input_channels = parse_size(kv, "input_channels", c.input_channels);
  c.kernel_size = parse_size(kv, "kernel_size", c.kernel_size);
  c.sigma_k = parse_double(kv, "sigma_k", c.sigma_k);
  c.sigma_l_init = parse_double(kv, "sigma_l_init", c.sigma_l_init);
  c.use_rcsse = parse_bool(kv, "use_rcsse", c.use_rcsse);
  c.use_noise = parse_bool(kv, "use_noise", c.use_noise);
  c.use_enresb = parse_bool(kv, "use_enresb", c.use_enresb);
  c.se_reduction = parse_size(kv, "se_reduction", c.se_reduction);
  c.num_enresb = parse_size(kv, "num_enresb", c.num_enresb);
  c.validate();
  return c;
}

ModelConfig apply_variant(const ModelConfig& base, const std::string& variant) {
  ModelConfig c = base;
  if (variant == "full") {
    c.use_rcsse = c.use_noise = c.use_enresb = true;
  } else if (variant == "+") {
    c.use_rcsse = false;
    c.use_noise = c.use_enresb = true;
  } else if (variant == "++") {
    c.use_noise = false;
    c.use_rcsse = c.use_enresb = true;
  } else if (variant == "+++") {
    c.use_rcsse = c.use_noise = false;
    c.use_enresb = true;
  } else if (variant == "++++") {
    c.use_rcsse = c.use_noise = c.use_enresb = false;
  } else {
    throw std::invalid_argument("unknown ablation variant '" + variant + "'");
  }
  return c;
}

std::vector<AblationPreset> ablation_presets(const ModelConfig& base) {
  std::vector<AblationPreset> out;
  for (const char* v : {"full", "+", "++", "+++", "++++"}) out.push_back({v, apply_variant(base, v)});
  return out;
}

std::size_t conv_param_count(std::size_t cin, std::size_t cout, std::size_t k, bool bias) {
  return cout * cin * k * k + (bias ? cout : 0);
}

std::size_t cbr_param_count(std::size_t cin, std::size_t cout, std::size_t k) {
  return conv_param_count(cin, cout, k) + 2 * cout;
}

std::size_t residual_block_param_count(std::size_t c, std::size_t k, bool separable) {
  const std::size_t stage = separable ? (k * k * c + c) + (c * c + c) + 2 * c
                                      : conv_param_count(c, c, k) + 2 * c;
  return 2 * stage;
}

std::size_t rcsse_param_count(std::size_t c, std::size_t r) {
  const std::size_t hidden = c / r;
  return (c + 1) + (c * hidden + hidden) + (hidden * c + c);
}

std::size_t parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t k = cfg.kernel_size;
  std::size_t n = 0;
  for (std::size_t l = 1; l <= cfg.levels; ++l) {
    const std::size_t cin = l == 1 ? cfg.input_channels : cfg.channels_at(l - 1);
    n += cbr_param_count(cin, cfg.channels_at(l), k) +
         cbr_param_count(cfg.channels_at(l), cfg.channels_at(l), k);
  }
  n += cfg.num_enresb * residual_block_param_count(cfg.channels_at(cfg.levels), k, cfg.use_enresb);
  for (std::size_t l = 1; l < cfg.levels; ++l) {
    if (cfg.use_rcsse) n += rcsse_param_count(cfg.channels_at(l), cfg.se_reduction);
    n += cbr_param_count(cfg.channels_at(l + 1), cfg.channels_at(l), k) +
         2 * cbr_param_count(cfg.channels_at(l), cfg.channels_at(l), k);
  }
  n += conv_param_count(cfg.channels_at(1), cfg.input_channels, 1);
  if (cfg.use_noise) n += 1;
  return n;
}

Tensor Initializer::weight(Shape shape, std::size_t fan_in) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.mutable_data()) v = dist(rng_);
  return t;
}

CbrLayer::CbrLayer(ParameterStore& store, std::vector<NamedBuffer>& buffers,
                   const std::string& prefix, std::size_t cin, std::size_t cout, std::size_t k,
                   int stride, Initializer& init)
    : stats_(std::make_shared<ops::BatchNormStats>(cout)),
      stride_(stride),
      padding_(static_cast<int>(k / 2)) {
  weight_ = store.add(prefix + ".conv.weight", init.weight({cout, cin, k, k}, cin * k * k));
  bias_ = store.add(prefix + ".conv.bias", Initializer::zeros({cout}));
  gamma_ = store.add(prefix + ".bn.gamma", Tensor({cout}, 1.0));
  beta_ = store.add(prefix + ".bn.beta", Initializer::zeros({cout}));
  buffers.push_back({prefix + ".bn", stats_});
}

Tensor CbrLayer::forward(const Tensor& x, Mode mode) const {
  return ops::relu(ops::batchnorm2d(ops::conv2d(x, weight_, bias_, stride_, padding_), gamma_,
                                    beta_, *stats_, mode));
}

ResidualBlock::ResidualBlock(ParameterStore& store, std::vector<NamedBuffer>& buffers,
                             const std::string& prefix, std::size_t c, std::size_t k,
                             bool separable, Initializer& init)
    : separable_(separable), padding_(static_cast<int>(k / 2)) {
  for (int s = 0; s < 2; ++s) {
    const std::string p = prefix + ".stage" + std::to_string(s);
    Stage st;
    if (separable) {
      st.dw_weight = store.add(p + ".dw.weight", init.weight({c, 1, k, k}, k * k));
      st.dw_bias = store.add(p + ".dw.bias", Initializer::zeros({c}));
      st.pw_weight = store.add(p + ".pw.weight", init.weight({c, c, 1, 1}, c));
      st.pw_bias = store.add(p + ".pw.bias", Initializer::zeros({c}));
    } else {
      st.weight = store.add(p + ".conv.weight", init.weight({c, c, k, k}, c * k * k));
      st.bias = store.add(p + ".conv.bias", Initializer::zeros({c}));
    }
    st.gamma = store.add(p + ".bn.gamma", Tensor({c}, 1.0));
    st.beta = store.add(p + ".bn.beta", Initializer::zeros({c}));
    st.stats = std::make_shared<ops::BatchNormStats>(c);
    buffers.push_back({p + ".bn", st.stats});
    stages_.push_back(std::move(st));
  }
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) const {
  Tensor h = x;
  for (const auto& st : stages_) {
    Tensor conv = separable_
                      ? ops::pointwise_conv2d(
                            ops::depthwise_conv2d(h, st.dw_weight, st.dw_bias, padding_),
                            st.pw_weight, st.pw_bias)
                      : ops::conv2d(h, st.weight, st.bias, 1, padding_);
    h = ops::relu(ops::batchnorm2d(conv, st.gamma, st.beta, *st.stats, mode));
  }
  return ops::add(x, h);
}

RcsSEBlock::RcsSEBlock(ParameterStore& store, const std::string& prefix, std::size_t c,
                       std::size_t reduction, Initializer& init)
    : channels_(c) {
  if (reduction == 0 || c % reduction != 0) {
    throw std::invalid_argument("rcsse: channels " + std::to_string(c) +
                                " not divisible by reduction " + std::to_string(reduction));
  }
  const std::size_t hidden = c / reduction;
  spatial_weight_ = store.add(prefix + ".sse.weight", init.weight({1, c, 1, 1}, c));
  spatial_bias_ = store.add(prefix + ".sse.bias", Initializer::zeros({1}));
  fc1_weight_ = store.add(prefix + ".cse.fc1.weight", init.weight({hidden, c}, c));
  fc1_bias_ = store.add(prefix + ".cse.fc1.bias", Initializer::zeros({hidden}));
  fc2_weight_ = store.add(prefix + ".cse.fc2.weight", init.weight({c, hidden}, hidden));
  fc2_bias_ = store.add(prefix + ".cse.fc2.bias", Initializer::zeros({c}));
}

Tensor RcsSEBlock::spatial_gate(const Tensor& f) const {
  return ops::sigmoid(ops::pointwise_conv2d(f, spatial_weight_, spatial_bias_));
}

Tensor RcsSEBlock::channel_gate(const Tensor& f) const {
  const Tensor squeezed = ops::global_avg_pool(f);
  const Tensor hidden = ops::relu(ops::fully_connected(squeezed, fc1_weight_, fc1_bias_));
  return ops::sigmoid(ops::fully_connected(hidden, fc2_weight_, fc2_bias_));
}

Tensor RcsSEBlock::forward(const Tensor& f) const {
  if (f.rank() != 4 || f.dim(1) != channels_) {
    throw std::invalid_argument("rcsse: expected " + std::to_string(channels_) +
                                " channels, got shape " + shape_to_string(f.shape()));
  }
  return ops::add(ops::mul(f, channel_gate(f)), ops::mul(f, spatial_gate(f)));
}

ReMarNet::ReMarNet(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  Initializer init(init_seed);
  const std::size_t k = config_.kernel_size;
  const std::size_t levels = config_.levels;

  for (std::size_t l = 1; l <= levels; ++l) {
    const std::string p = "enc." + std::to_string(l);
    const std::size_t cin = l == 1 ? config_.input_channels : config_.channels_at(l - 1);
    const std::size_t c = config_.channels_at(l);
    std::vector<CbrLayer> level;
    level.emplace_back(params_, buffers_, p + ".0", cin, c, k, l == 1 ? 1 : 2, init);
    level.emplace_back(params_, buffers_, p + ".1", c, c, k, 1, init);
    encoder_.push_back(std::move(level));
  }
  for (std::size_t i = 0; i < config_.num_enresb; ++i) {
    bottleneck_.emplace_back(params_, buffers_, "bottleneck." + std::to_string(i),
                             config_.channels_at(levels), k, config_.use_enresb, init);
  }
  if (config_.use_rcsse) {
    for (std::size_t l = 1; l < levels; ++l) {
      rcsse_.emplace_back(params_, "skip." + std::to_string(l), config_.channels_at(l),
                          config_.se_reduction, init);
    }
  }
  for (std::size_t l = 1; l < levels; ++l) {
    const std::string p = "dec." + std::to_string(l);
    const std::size_t c = config_.channels_at(l);
    std::vector<CbrLayer> stage;
    stage.emplace_back(params_, buffers_, p + ".up", config_.channels_at(l + 1), c, k, 1, init);
    stage.emplace_back(params_, buffers_, p + ".0", c, c, k, 1, init);
    stage.emplace_back(params_, buffers_, p + ".1", c, c, k, 1, init);
    decoder_.push_back(std::move(stage));
  }
  const std::size_t c1 = config_.channels_at(1);
  head_weight_ = params_.add("head.weight", init.weight({config_.input_channels, c1, 1, 1}, c1));
  head_bias_ = params_.add("head.bias", Initializer::zeros({config_.input_channels}));
  if (config_.use_noise) sigma_l_ = params_.add("sigma_L", Tensor::scalar(config_.sigma_l_init));
}

Tensor ReMarNet::perturb_input(const Tensor& x, std::mt19937_64& rng, Mode mode) const {
  if (mode != Mode::Train || !config_.use_noise || config_.sigma_k == 0.0) return x;
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor noise(x.shape(), 0.0);
  for (auto& v : noise.mutable_data()) v = config_.sigma_k * normal(rng);
  return ops::add(x, noise);
}

std::vector<Tensor> ReMarNet::encode_impl(const Tensor& x, std::mt19937_64& rng,
                                          Mode mode) const {
  if (x.rank() != 4 || x.dim(1) != config_.input_channels) {
    throw std::invalid_argument("model input must be [B," +
                                std::to_string(config_.input_channels) + ",H,W], got " +
                                shape_to_string(x.shape()));
  }
  config_.check_input(x.dim(2), x.dim(3));
  std::vector<Tensor> features;
  Tensor h = perturb_input(x, rng, mode);
  for (const auto& level : encoder_) {
    for (const auto& layer : level) h = layer.forward(h, mode);
    features.push_back(h);
  }
  return features;
}

std::vector<Tensor> ReMarNet::encode(const Tensor& x, std::uint64_t noise_seed, Mode mode) const {
  std::mt19937_64 rng(noise_seed);
  return encode_impl(x, rng, mode);
}

Tensor ReMarNet::skip(std::size_t level, const Tensor& feature) const {
  if (!config_.use_rcsse) return feature;
  return ops::add(feature, rcsse_.at(level - 1).forward(feature));
}

Tensor ReMarNet::forward(const Tensor& x, std::uint64_t noise_seed, Mode mode) const {
  std::mt19937_64 rng(noise_seed);
  const auto features = encode_impl(x, rng, mode);
  Tensor h = features.back();
  for (const auto& block : bottleneck_) h = block.forward(h, mode);
  if (mode == Mode::Train && config_.use_noise) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor z(h.shape(), 0.0);
    for (auto& v : z.mutable_data()) v = normal(rng);
    h = ops::add(h, ops::mul(z, sigma_l_));
  }
  for (std::size_t l = config_.levels - 1; l >= 1; --l) {
    const auto& stage = decoder_[l - 1];
    h = stage[0].forward(ops::upsample_nearest2x(h), mode);
    h = ops::add(h, skip(l, features[l - 1]));
    h = stage[1].forward(h, mode);
    h = stage[2].forward(h, mode);
  }
  return ops::conv2d(h, head_weight_, head_bias_, 1, 0);
}

ReMarNet::State ReMarNet::state() const {
  State s;
  for (const auto& p : params_.items()) {
    s[p.name] = std::vector<double>(p.tensor.data().begin(), p.tensor.data().end());
  }
  for (const auto& b : buffers_) {
    s[b.name + ".running_mean"] = b.stats->running_mean;
    s[b.name + ".running_var"] = b.stats->running_var;
  }
  return s;
}

void ReMarNet::load_state(const State& state) {
  auto fetch = [&state](const std::string& name, std::size_t size) -> const std::vector<double>& {
    auto it = state.find(name);
    if (it == state.end()) throw std::runtime_error("state is missing '" + name + "'");
    if (it->second.size() != size) {
      throw std::runtime_error("state entry '" + name + "' has " +
                               std::to_string(it->second.size()) + " values, expected " +
                               std::to_string(size));
    }
    return it->second;
  };
  for (auto& p : params_.items()) {
    const auto& v = fetch(p.name, p.tensor.numel());
    std::copy(v.begin(), v.end(), p.tensor.mutable_data().begin());
  }
  for (auto& b : buffers_) {
    b.stats->running_mean = fetch(b.name + ".running_mean", b.stats->running_mean.size());
    b.stats->running_var = fetch(b.name + ".running_var", b.stats->running_var.size());
  }
}

}  // namespace remar
