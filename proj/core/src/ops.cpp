#include "remar/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace remar::ops {

namespace {

double g_conv_weight_grad_scale = 1.0;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void fail(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

void require_rank(const std::string& op, const std::string& name, const Tensor& t,
                  std::size_t rank) {
  if (!t.defined()) fail(op, name + " is undefined");
  if (t.rank() != rank) {
    fail(op, name + " must have rank " + std::to_string(rank) + ", got shape " +
                 shape_to_string(t.shape()));
  }
}

void require_dim(const std::string& op, const std::string& what, std::size_t got,
                 std::size_t expected) {
  if (got != expected) {
    fail(op, what + " mismatch: expected " + std::to_string(expected) + ", got " +
                 std::to_string(got));
  }
}

void check_bias(const std::string& op, const Tensor& bias, std::size_t channels) {
  if (!bias.defined()) return;
  if (bias.rank() != 1) fail(op, "bias must be rank 1, got " + shape_to_string(bias.shape()));
  require_dim(op, "bias length (dimension 0)", bias.dim(0), channels);
}

struct Dims4 {
  std::size_t n, c, h, w;
  explicit Dims4(const Shape& s) : n(s[0]), c(s[1]), h(s[2]), w(s[3]) {}
};

// im2col for one sample: col is [Cin*k*k, Hout*Wout].
void im2col(const double* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
            int stride, int pad, std::size_t hout, std::size_t wout, double* col) {
  const std::size_t plane = hout * wout;
  for (std::size_t ci = 0; ci < cin; ++ci) {
    const double* xc = x + ci * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = col + ((ci * k + ky) * k + kx) * plane;
        for (std::size_t oy = 0; oy < hout; ++oy) {
          const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ky);
          double* dst = row + oy * wout;
          if (iy < 0 || iy >= static_cast<long>(h)) {
            std::fill(dst, dst + wout, 0.0);
            continue;
          }
          const double* src = xc + iy * w;
          for (std::size_t ox = 0; ox < wout; ++ox) {
            const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(kx);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t cin, std::size_t h, std::size_t w,
                std::size_t k, int stride, int pad, std::size_t hout, std::size_t wout,
                double* x) {
  const std::size_t plane = hout * wout;
  for (std::size_t ci = 0; ci < cin; ++ci) {
    double* xc = x + ci * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((ci * k + ky) * k + kx) * plane;
        for (std::size_t oy = 0; oy < hout; ++oy) {
          const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          double* dst = xc + iy * w;
          const double* src = row + oy * wout;
          for (std::size_t ox = 0; ox < wout; ++ox) {
            const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(kx);
            if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

enum class Broadcast { Same, Scalar, Channel, SampleChannel, Position, SamplePosition };

Broadcast classify_broadcast(const std::string& op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::Same;
  if (shape_numel(b) == 1) return Broadcast::Scalar;
  if (a.size() == 4) {
    if (b.size() == 1 && b[0] == a[1]) return Broadcast::Channel;
    if (b.size() == 2 && b[0] == a[0] && b[1] == a[1]) return Broadcast::SampleChannel;
    if (b.size() == 2 && b[0] == a[2] && b[1] == a[3]) return Broadcast::Position;
    if (b.size() == 4 && b[0] == a[0] && b[1] == 1 && b[2] == a[2] && b[3] == a[3]) {
      return Broadcast::SamplePosition;
    }
  }
  fail(op, "cannot broadcast " + shape_to_string(b) + " against " + shape_to_string(a));
}

struct BroadcastIndex {
  Broadcast kind;
  std::size_t c = 1, h = 1, w = 1;

  BroadcastIndex(Broadcast k, const Shape& a) : kind(k) {
    if (a.size() == 4) {
      c = a[1];
      h = a[2];
      w = a[3];
    }
  }

  std::size_t operator()(std::size_t i) const {
    switch (kind) {
      case Broadcast::Same:
        return i;
      case Broadcast::Scalar:
        return 0;
      case Broadcast::Channel:
        return (i / (h * w)) % c;
      case Broadcast::SampleChannel:
        return i / (h * w);
      case Broadcast::Position:
        return i % (h * w);
      case Broadcast::SamplePosition:
        return (i / (c * h * w)) * h * w + i % (h * w);
    }
    return 0;
  }
};

template <typename Fwd, typename DA, typename DB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  if (!a.defined() || !b.defined()) fail(name, "undefined operand");
  const BroadcastIndex idx(classify_broadcast(name, a.shape(), b.shape()), a.shape());
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[idx(i)]);
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, name,
                             [idx, da, db](detail::Node& self) {
                               const auto& x = self.parents[0]->values;
                               const auto& y = self.parents[1]->values;
                               const auto& g = self.grad;
                               if (double* ga = self.parent_grad(0)) {
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                   ga[i] += g[i] * da(x[i], y[idx(i)]);
                                 }
                               }
                               if (double* gb = self.parent_grad(1)) {
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                   gb[idx(i)] += g[i] * db(x[i], y[idx(i)]);
                                 }
                               }
                             });
}

// Elementwise unary op whose derivative is expressed through input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  if (!x.defined()) fail(name, "undefined operand");
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, name,
                             [deriv](detail::Node& self) {
                               double* gx = self.parent_grad(0);
                               if (!gx) return;
                               const auto& xv = self.parents[0]->values;
                               for (std::size_t i = 0; i < xv.size(); ++i) {
                                 gx[i] += self.grad[i] * deriv(xv[i], self.values[i]);
                               }
                             });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  const std::string op = "conv2d";
  require_rank(op, "input", input, 4);
  require_rank(op, "weight", weight, 4);
  if (stride < 1) fail(op, "stride must be >= 1");
  if (padding < 0) fail(op, "padding must be >= 0");
  const Dims4 in(input.shape());
  const std::size_t cout = weight.dim(0);
  require_dim(op, "input channels (dimension 1)", in.c, weight.dim(1));
  const std::size_t k = weight.dim(2);
  require_dim(op, "kernel width (weight dimension 3)", weight.dim(3), k);
  if (k % 2 == 0) fail(op, "kernel size must be odd, got " + std::to_string(k));
  check_bias(op, bias, cout);
  const long span_h = static_cast<long>(in.h) + 2 * padding - static_cast<long>(k);
  const long span_w = static_cast<long>(in.w) + 2 * padding - static_cast<long>(k);
  if (span_h < 0) fail(op, "input height (dimension 2) smaller than the kernel");
  if (span_w < 0) fail(op, "input width (dimension 3) smaller than the kernel");
  const std::size_t hout = static_cast<std::size_t>(span_h / stride) + 1;
  const std::size_t wout = static_cast<std::size_t>(span_w / stride) + 1;
  const std::size_t kk = in.c * k * k;
  const std::size_t plane = hout * wout;

  std::vector<double> out(in.n * cout * plane);
  std::vector<double> col(kk * plane);
  const ConstMapMat wm(weight.data().data(), cout, kk);
  const auto xv = input.data();
  for (std::size_t n = 0; n < in.n; ++n) {
    im2col(xv.data() + n * in.c * in.h * in.w, in.c, in.h, in.w, k, stride, padding, hout,
           wout, col.data());
    MapMat om(out.data() + n * cout * plane, cout, plane);
    om.noalias() = wm * ConstMapMat(col.data(), kk, plane);
    if (bias.defined()) {
      const auto bv = bias.data();
      for (std::size_t co = 0; co < cout; ++co) om.row(co).array() += bv[co];
    }
  }

  Shape shape{in.n, cout, hout, wout};
  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(
      shape, std::move(out), inputs, "conv2d",
      [in, cout, k, stride, padding, hout, wout, kk, plane](detail::Node& self) {
        const auto& xv = self.parents[0]->values;
        const auto& wv = self.parents[1]->values;
        double* gx = self.parent_grad(0);
        double* gw = self.parent_grad(1);
        double* gb = self.parents.size() > 2 ? self.parent_grad(2) : nullptr;
        std::vector<double> col(kk * plane);
        const ConstMapMat wm(wv.data(), cout, kk);
        for (std::size_t n = 0; n < in.n; ++n) {
          const ConstMapMat g(self.grad.data() + n * cout * plane, cout, plane);
          if (gb) {
            for (std::size_t co = 0; co < cout; ++co) gb[co] += g.row(co).sum();
          }
          if (gw) {
            im2col(xv.data() + n * in.c * in.h * in.w, in.c, in.h, in.w, k, stride, padding,
                   hout, wout, col.data());
            MapMat(gw, cout, kk).noalias() +=
                g_conv_weight_grad_scale * (g * ConstMapMat(col.data(), kk, plane).transpose());
          }
          if (gx) {
            MapMat dcol(col.data(), kk, plane);
            dcol.noalias() = wm.transpose() * g;
            col2im_add(col.data(), in.c, in.h, in.w, k, stride, padding, hout, wout,
                       gx + n * in.c * in.h * in.w);
          }
        }
      });
}

void set_conv2d_weight_grad_scale(double scale) { g_conv_weight_grad_scale = scale; }

Tensor depthwise_conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        int padding) {
  const std::string op = "depthwise_conv2d";
  require_rank(op, "input", input, 4);
  require_rank(op, "weight", weight, 4);
  const Dims4 in(input.shape());
  require_dim(op, "weight channel count (dimension 0) vs input channels", weight.dim(0), in.c);
  require_dim(op, "weight dimension 1 (filters per channel)", weight.dim(1), 1);
  const std::size_t k = weight.dim(2);
  require_dim(op, "kernel width (weight dimension 3)", weight.dim(3), k);
  if (k % 2 == 0) fail(op, "kernel size must be odd, got " + std::to_string(k));
  check_bias(op, bias, in.c);
  const long hl = static_cast<long>(in.h) + 2 * padding - static_cast<long>(k) + 1;
  const long wl = static_cast<long>(in.w) + 2 * padding - static_cast<long>(k) + 1;
  if (hl <= 0 || wl <= 0) fail(op, "input smaller than the kernel");
  const std::size_t hout = static_cast<std::size_t>(hl);
  const std::size_t wout = static_cast<std::size_t>(wl);
  const long pad = padding;

  std::vector<double> out(in.n * in.c * hout * wout, 0.0);
  const auto xv = input.data();
  const auto wv = weight.data();
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      const double* x = xv.data() + (n * in.c + c) * in.h * in.w;
      const double* wk = wv.data() + c * k * k;
      double* o = out.data() + (n * in.c + c) * hout * wout;
      const double b0 = bias.defined() ? bias.data()[c] : 0.0;
      for (std::size_t oy = 0; oy < hout; ++oy) {
        for (std::size_t ox = 0; ox < wout; ++ox) {
          double acc = b0;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const long iy = static_cast<long>(oy + ky) - pad;
            if (iy < 0 || iy >= static_cast<long>(in.h)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long ix = static_cast<long>(ox + kx) - pad;
              if (ix < 0 || ix >= static_cast<long>(in.w)) continue;
              acc += wk[ky * k + kx] * x[iy * static_cast<long>(in.w) + ix];
            }
          }
          o[oy * wout + ox] = acc;
        }
      }
    }
  }

  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(
      Shape{in.n, in.c, hout, wout}, std::move(out), inputs, "depthwise_conv2d",
      [in, k, hout, wout, pad](detail::Node& self) {
        const auto& xv = self.parents[0]->values;
        const auto& wv = self.parents[1]->values;
        double* gx = self.parent_grad(0);
        double* gw = self.parent_grad(1);
        double* gb = self.parents.size() > 2 ? self.parent_grad(2) : nullptr;
        for (std::size_t n = 0; n < in.n; ++n) {
          for (std::size_t c = 0; c < in.c; ++c) {
            const std::size_t xoff = (n * in.c + c) * in.h * in.w;
            const double* g = self.grad.data() + (n * in.c + c) * hout * wout;
            for (std::size_t oy = 0; oy < hout; ++oy) {
              for (std::size_t ox = 0; ox < wout; ++ox) {
                const double go = g[oy * wout + ox];
                if (gb) gb[c] += go;
                for (std::size_t ky = 0; ky < k; ++ky) {
                  const long iy = static_cast<long>(oy + ky) - pad;
                  if (iy < 0 || iy >= static_cast<long>(in.h)) continue;
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    const long ix = static_cast<long>(ox + kx) - pad;
                    if (ix < 0 || ix >= static_cast<long>(in.w)) continue;
                    const std::size_t xi = xoff + iy * in.w + ix;
                    if (gw) gw[c * k * k + ky * k + kx] += go * xv[xi];
                    if (gx) gx[xi] += go * wv[c * k * k + ky * k + kx];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor pointwise_conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  const std::string op = "pointwise_conv2d";
  require_rank(op, "input", input, 4);
  require_rank(op, "weight", weight, 4);
  const Dims4 in(input.shape());
  const std::size_t cout = weight.dim(0);
  require_dim(op, "input channels (dimension 1)", in.c, weight.dim(1));
  require_dim(op, "kernel height (weight dimension 2)", weight.dim(2), 1);
  require_dim(op, "kernel width (weight dimension 3)", weight.dim(3), 1);
  check_bias(op, bias, cout);
  const std::size_t plane = in.h * in.w;

  std::vector<double> out(in.n * cout * plane);
  const ConstMapMat wm(weight.data().data(), cout, in.c);
  for (std::size_t n = 0; n < in.n; ++n) {
    MapMat om(out.data() + n * cout * plane, cout, plane);
    om.noalias() = wm * ConstMapMat(input.data().data() + n * in.c * plane, in.c, plane);
    if (bias.defined()) {
      for (std::size_t co = 0; co < cout; ++co) om.row(co).array() += bias.data()[co];
    }
  }

  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(
      Shape{in.n, cout, in.h, in.w}, std::move(out), inputs, "pointwise_conv2d",
      [in, cout, plane](detail::Node& self) {
        const auto& xv = self.parents[0]->values;
        const ConstMapMat wm(self.parents[1]->values.data(), cout, in.c);
        double* gx = self.parent_grad(0);
        double* gw = self.parent_grad(1);
        double* gb = self.parents.size() > 2 ? self.parent_grad(2) : nullptr;
        for (std::size_t n = 0; n < in.n; ++n) {
          const ConstMapMat g(self.grad.data() + n * cout * plane, cout, plane);
          if (gb) {
            for (std::size_t co = 0; co < cout; ++co) gb[co] += g.row(co).sum();
          }
          if (gw) {
            MapMat(gw, cout, in.c).noalias() +=
                g * ConstMapMat(xv.data() + n * in.c * plane, in.c, plane).transpose();
          }
          if (gx) {
            MapMat(gx + n * in.c * plane, in.c, plane).noalias() += wm.transpose() * g;
          }
        }
      });
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormStats& stats, Mode mode) {
  const std::string op = "batchnorm2d";
  require_rank(op, "input", input, 4);
  const Dims4 in(input.shape());
  require_rank(op, "gamma", gamma, 1);
  require_rank(op, "beta", beta, 1);
  require_dim(op, "gamma length vs input channels (dimension 1)", gamma.dim(0), in.c);
  require_dim(op, "beta length vs input channels (dimension 1)", beta.dim(0), in.c);
  require_dim(op, "running mean length", stats.running_mean.size(), in.c);
  require_dim(op, "running var length", stats.running_var.size(), in.c);
  const std::size_t plane = in.h * in.w;
  const std::size_t count = in.n * plane;
  if (mode == Mode::Train && count < 2) {
    fail(op, "train mode needs at least 2 values per channel");
  }

  const auto xv = input.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(in.c);
  std::vector<double> out(xv.size());
  for (std::size_t c = 0; c < in.c; ++c) {
    double mu;
    double var;
    if (mode == Mode::Train) {
      double s = 0.0;
      for (std::size_t n = 0; n < in.n; ++n) {
        const double* p = xv.data() + (n * in.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t n = 0; n < in.n; ++n) {
        const double* p = xv.data() + (n * in.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      var = ss / static_cast<double>(count);
      const double unbiased = ss / static_cast<double>(count - 1);
      stats.running_mean[c] = (1.0 - stats.momentum) * stats.running_mean[c] + stats.momentum * mu;
      stats.running_var[c] =
          (1.0 - stats.momentum) * stats.running_var[c] + stats.momentum * unbiased;
    } else {
      mu = stats.running_mean[c];
      var = stats.running_var[c];
    }
    inv_std[c] = 1.0 / std::sqrt(var + stats.eps);
    for (std::size_t n = 0; n < in.n; ++n) {
      const std::size_t off = (n * in.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[off + i] = (xv[off + i] - mu) * inv_std[c];
        out[off + i] = gv[c] * xhat[off + i] + bv[c];
      }
    }
  }

  return Tensor::make_result(
      input.shape(), std::move(out), {input, gamma, beta}, "batchnorm2d",
      [in, plane, count, mode, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](detail::Node& self) {
        const auto& gv = self.parents[1]->values;
        double* gx = self.parent_grad(0);
        double* gg = self.parent_grad(1);
        double* gbeta = self.parent_grad(2);
        const auto& g = self.grad;
        const double m = static_cast<double>(count);
        for (std::size_t c = 0; c < in.c; ++c) {
          double sum_g = 0.0;
          double sum_gx = 0.0;
          for (std::size_t n = 0; n < in.n; ++n) {
            const std::size_t off = (n * in.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g += g[off + i];
              sum_gx += g[off + i] * xhat[off + i];
            }
          }
          if (gg) gg[c] += sum_gx;
          if (gbeta) gbeta[c] += sum_g;
          if (!gx) continue;
          const double scale = gv[c] * inv_std[c];
          for (std::size_t n = 0; n < in.n; ++n) {
            const std::size_t off = (n * in.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              if (mode == Mode::Train) {
                gx[off + i] += scale * (g[off + i] - sum_g / m - xhat[off + i] * sum_gx / m);
              } else {
                gx[off + i] += scale * g[off + i];
              }
            }
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor pow(const Tensor& x, double exponent) {
  return unary(
      "pow", x, [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) { return exponent * std::pow(v, exponent - 1.0); });
}

Tensor clamp_min(const Tensor& x, double lo) {
  return unary(
      "clamp_min", x, [lo](double v) { return v < lo ? lo : v; },
      [lo](double v, double) { return v < lo ? 0.0 : 1.0; });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scalar_mul(const Tensor& x, double s) {
  return unary(
      "scalar_mul", x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(
      "add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor sum(const Tensor& x) {
  if (!x.defined()) fail("sum", "undefined operand");
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::make_result(Shape{1}, {s}, {x}, "sum", [](detail::Node& self) {
    if (double* gx = self.parent_grad(0)) {
      const std::size_t n = self.parents[0]->values.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  if (!x.defined()) fail("mean", "undefined operand");
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double n = static_cast<double>(x.numel());
  return Tensor::make_result(Shape{1}, {s / n}, {x}, "mean", [n](detail::Node& self) {
    if (double* gx = self.parent_grad(0)) {
      const std::size_t count = self.parents[0]->values.size();
      for (std::size_t i = 0; i < count; ++i) gx[i] += self.grad[0] / n;
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", "input", x, 4);
  const Dims4 in(x.shape());
  const std::size_t plane = in.h * in.w;
  std::vector<double> out(in.n * in.c);
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < plane; ++j) s += xv[i * plane + j];
    out[i] = s / static_cast<double>(plane);
  }
  return Tensor::make_result(Shape{in.n, in.c}, std::move(out), {x}, "global_avg_pool",
                             [plane](detail::Node& self) {
                               double* gx = self.parent_grad(0);
                               if (!gx) return;
                               const double inv = 1.0 / static_cast<double>(plane);
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                 for (std::size_t j = 0; j < plane; ++j) {
                                   gx[i * plane + j] += self.grad[i] * inv;
                                 }
                               }
                             });
}

Tensor fully_connected(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const std::string op = "fully_connected";
  require_rank(op, "input", x, 2);
  require_rank(op, "weight", weight, 2);
  const std::size_t batch = x.dim(0);
  const std::size_t fin = x.dim(1);
  const std::size_t fout = weight.dim(0);
  require_dim(op, "input features (dimension 1)", fin, weight.dim(1));
  check_bias(op, bias, fout);
  std::vector<double> out(batch * fout);
  MapMat om(out.data(), batch, fout);
  om.noalias() = ConstMapMat(x.data().data(), batch, fin) *
                 ConstMapMat(weight.data().data(), fout, fin).transpose();
  if (bias.defined()) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t o = 0; o < fout; ++o) om(b, o) += bias.data()[o];
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(
      Shape{batch, fout}, std::move(out), inputs, "fully_connected",
      [batch, fin, fout](detail::Node& self) {
        const ConstMapMat g(self.grad.data(), batch, fout);
        if (double* gx = self.parent_grad(0)) {
          MapMat(gx, batch, fin).noalias() +=
              g * ConstMapMat(self.parents[1]->values.data(), fout, fin);
        }
        if (double* gw = self.parent_grad(1)) {
          MapMat(gw, fout, fin).noalias() +=
              g.transpose() * ConstMapMat(self.parents[0]->values.data(), batch, fin);
        }
        if (self.parents.size() > 2) {
          if (double* gb = self.parent_grad(2)) {
            for (std::size_t o = 0; o < fout; ++o) gb[o] += g.col(o).sum();
          }
        }
      });
}

Tensor upsample_nearest2x(const Tensor& x) {
  require_rank("upsample_nearest2x", "input", x, 4);
  const Dims4 in(x.shape());
  const std::size_t h2 = in.h * 2;
  const std::size_t w2 = in.w * 2;
  const std::size_t planes = in.n * in.c;
  std::vector<double> out(planes * h2 * w2);
  const auto xv = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < h2; ++y) {
      for (std::size_t xx = 0; xx < w2; ++xx) {
        out[(p * h2 + y) * w2 + xx] = xv[(p * in.h + y / 2) * in.w + xx / 2];
      }
    }
  }
  return Tensor::make_result(Shape{in.n, in.c, h2, w2}, std::move(out), {x},
                             "upsample_nearest2x", [in, planes, h2, w2](detail::Node& self) {
                               double* gx = self.parent_grad(0);
                               if (!gx) return;
                               for (std::size_t p = 0; p < planes; ++p) {
                                 for (std::size_t y = 0; y < h2; ++y) {
                                   for (std::size_t xx = 0; xx < w2; ++xx) {
                                     gx[(p * in.h + y / 2) * in.w + xx / 2] +=
                                         self.grad[(p * h2 + y) * w2 + xx];
                                   }
                                 }
                               }
                             });
}

Tensor avg_pool2x(const Tensor& x) {
  require_rank("avg_pool2x", "input", x, 4);
  const Dims4 in(x.shape());
  if (in.h % 2 || in.w % 2) {
    fail("avg_pool2x", "height and width must be even, got " + shape_to_string(x.shape()));
  }
  const std::size_t h2 = in.h / 2;
  const std::size_t w2 = in.w / 2;
  const std::size_t planes = in.n * in.c;
  std::vector<double> out(planes * h2 * w2);
  const auto xv = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * in.h * in.w;
    for (std::size_t y = 0; y < h2; ++y) {
      for (std::size_t xx = 0; xx < w2; ++xx) {
        const double s = src[2 * y * in.w + 2 * xx] + src[2 * y * in.w + 2 * xx + 1] +
                         src[(2 * y + 1) * in.w + 2 * xx] + src[(2 * y + 1) * in.w + 2 * xx + 1];
        out[(p * h2 + y) * w2 + xx] = 0.25 * s;
      }
    }
  }
  return Tensor::make_result(Shape{in.n, in.c, h2, w2}, std::move(out), {x}, "avg_pool2x",
                             [in, planes, h2, w2](detail::Node& self) {
                               double* gx = self.parent_grad(0);
                               if (!gx) return;
                               for (std::size_t p = 0; p < planes; ++p) {
                                 double* dst = gx + p * in.h * in.w;
                                 for (std::size_t y = 0; y < in.h; ++y) {
                                   for (std::size_t xx = 0; xx < in.w; ++xx) {
                                     dst[y * in.w + xx] +=
                                         0.25 * self.grad[(p * h2 + y / 2) * w2 + xx / 2];
                                   }
                                 }
                               }
                             });
}

namespace {

// cos/sin parts of the n-point DFT matrix; both symmetric.
struct DftBasis {
  RowMat cos;
  RowMat sin;

  explicit DftBasis(std::size_t n) : cos(n, n), sin(n, n) {
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t k = 0; k < n; ++k) {
        const double angle =
            2.0 * std::numbers::pi * static_cast<double>((u * k) % n) / static_cast<double>(n);
        cos(u, k) = std::cos(angle);
        sin(u, k) = std::sin(angle);
      }
    }
  }
};

}  // namespace

ComplexTensor dft2d(const Tensor& x) {
  require_rank("dft2d", "input", x, 4);
  const Dims4 in(x.shape());
  const std::size_t plane = in.h * in.w;
  const std::size_t planes = in.n * in.c;
  auto bh = std::make_shared<DftBasis>(in.h);
  auto bw = std::make_shared<DftBasis>(in.w);

  // exp(-i theta) = cos - i sin, so F = (Ch - i Sh) X (Cw - i Sw).
  std::vector<double> re(planes * plane);
  std::vector<double> im(planes * plane);
  for (std::size_t p = 0; p < planes; ++p) {
    const ConstMapMat xm(x.data().data() + p * plane, in.h, in.w);
    const RowMat xc = xm * bw->cos;
    const RowMat xs = xm * bw->sin;
    MapMat(re.data() + p * plane, in.h, in.w).noalias() = bh->cos * xc - bh->sin * xs;
    MapMat(im.data() + p * plane, in.h, in.w).noalias() = -(bh->sin * xc + bh->cos * xs);
  }

  ComplexTensor out;
  out.real = Tensor::make_result(x.shape(), std::move(re), {x}, "dft2d.real",
                                 [in, plane, planes, bh, bw](detail::Node& self) {
                                   double* gx = self.parent_grad(0);
                                   if (!gx) return;
                                   for (std::size_t p = 0; p < planes; ++p) {
                                     const ConstMapMat g(self.grad.data() + p * plane, in.h,
                                                         in.w);
                                     MapMat(gx + p * plane, in.h, in.w).noalias() +=
                                         bh->cos * g * bw->cos - bh->sin * g * bw->sin;
                                   }
                                 });
  out.imag = Tensor::make_result(x.shape(), std::move(im), {x}, "dft2d.imag",
                                 [in, plane, planes, bh, bw](detail::Node& self) {
                                   double* gx = self.parent_grad(0);
                                   if (!gx) return;
                                   for (std::size_t p = 0; p < planes; ++p) {
                                     const ConstMapMat g(self.grad.data() + p * plane, in.h,
                                                         in.w);
                                     MapMat(gx + p * plane, in.h, in.w).noalias() -=
                                         bh->sin * g * bw->cos + bh->cos * g * bw->sin;
                                   }
                                 });
  return out;
}

}  // namespace remar::ops
