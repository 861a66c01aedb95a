#pragma once

#include <vector>

#include "remar/tensor.hpp"

// Differentiable operations over [B,C,H,W] image tensors. Every op records
// its backward closure when any input requires grad.
namespace remar::ops {

/// 2D cross-correlation. `bias` may be undefined. Output spatial size is
/// floor((H + 2*padding - k) / stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride = 1,
              int padding = 0);

/// Fault injection for the verification suite: scales the weight gradient
/// produced by conv2d's backward. 1.0 restores correct behavior.
void set_conv2d_weight_grad_scale(double scale);

/// One k x k filter per channel, weight [C,1,k,k], same-size output.
Tensor depthwise_conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        int padding);

/// Channel mixing with weight [Cout,Cin,1,1].
Tensor pointwise_conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Train mode normalizes by batch statistics (biased variance) and folds the
/// unbiased variance into the running estimate; eval mode uses running stats.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormStats& stats, Mode mode);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor pow(const Tensor& x, double exponent);
/// Values below `lo` are clamped and receive zero gradient.
Tensor clamp_min(const Tensor& x, double lo);

// Binary ops. `b` either matches `a` exactly or broadcasts as one of:
// a single element, per-channel [C], per-sample-channel [B,C],
// per-position [H,W] or [B,1,H,W] against a rank-4 `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scalar_mul(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// [B,C,H,W] -> [B,C]
Tensor global_avg_pool(const Tensor& x);
/// x [B,In], weight [Out,In], bias [Out] -> [B,Out]
Tensor fully_connected(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor upsample_nearest2x(const Tensor& x);
/// 2x2 mean pooling, stride 2. Requires even H and W.
Tensor avg_pool2x(const Tensor& x);

struct ComplexTensor {
  Tensor real;
  Tensor imag;
};

/// Unnormalized forward 2D DFT of every (batch, channel) plane:
/// F(u,v) = sum_{y,x} f(y,x) exp(-2 pi i (u y / H + v x / W)).
ComplexTensor dft2d(const Tensor& x);

}  // namespace remar::ops
