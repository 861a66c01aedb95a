#include "remar/ssim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace remar {

std::vector<double> gaussian_taps(std::size_t size, double sigma) {
  if (size == 0 || size % 2 == 0) throw std::invalid_argument("gaussian window must be odd");
  std::vector<double> taps(size);
  const double center = static_cast<double>(size / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - center;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

namespace {

// Valid separable correlation: (h, w) -> (h - k + 1, w - k + 1).
std::vector<double> filter_valid(const double* src, std::size_t h, std::size_t w,
                                 const std::vector<double>& taps) {
  const std::size_t k = taps.size();
  const std::size_t oh = h - k + 1;
  const std::size_t ow = w - k + 1;
  std::vector<double> tmp(h * ow);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += taps[t] * src[y * w + x + t];
      tmp[y * ow + x] = acc;
    }
  }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += taps[t] * tmp[(y + t) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

// Adjoint of filter_valid: scatters an (oh, ow) map back onto (h, w).
void filter_valid_adjoint_add(const std::vector<double>& g, std::size_t h, std::size_t w,
                              const std::vector<double>& taps, double* dst) {
  const std::size_t k = taps.size();
  const std::size_t oh = h - k + 1;
  const std::size_t ow = w - k + 1;
  std::vector<double> tmp(h * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      const double v = g[y * ow + x];
      for (std::size_t t = 0; t < k; ++t) tmp[(y + t) * ow + x] += taps[t] * v;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      const double v = tmp[y * ow + x];
      for (std::size_t t = 0; t < k; ++t) dst[y * w + x + t] += taps[t] * v;
    }
  }
}

struct Moments {
  std::vector<double> mx, my, exx, eyy, exy;
};

Moments local_moments(const double* x, const double* y, std::size_t h, std::size_t w,
                      const std::vector<double>& taps) {
  std::vector<double> xx(h * w), yy(h * w), xy(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  return {filter_valid(x, h, w, taps), filter_valid(y, h, w, taps),
          filter_valid(xx.data(), h, w, taps), filter_valid(yy.data(), h, w, taps),
          filter_valid(xy.data(), h, w, taps)};
}

void check_window(std::size_t h, std::size_t w, const SsimOptions& opts) {
  if (h < opts.window || w < opts.window) {
    throw std::invalid_argument("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                                " is smaller than the " + std::to_string(opts.window) +
                                "-pixel window");
  }
}

}  // namespace

SsimMaps ssim_maps(std::span<const double> x, std::span<const double> y, std::size_t height,
                   std::size_t width, const SsimOptions& opts) {
  check_window(height, width, opts);
  if (x.size() != height * width || y.size() != height * width) {
    throw std::invalid_argument("ssim: plane size mismatch");
  }
  const auto taps = gaussian_taps(opts.window, opts.sigma);
  const Moments m = local_moments(x.data(), y.data(), height, width, taps);
  const double c1 = opts.c1();
  const double c2 = opts.c2();
  SsimMaps out;
  out.height = height - opts.window + 1;
  out.width = width - opts.window + 1;
  const std::size_t n = out.height * out.width;
  out.ssim.resize(n);
  out.cs.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double sxx = m.exx[i] - m.mx[i] * m.mx[i];
    const double syy = m.eyy[i] - m.my[i] * m.my[i];
    const double sxy = m.exy[i] - m.mx[i] * m.my[i];
    const double a1 = 2.0 * m.mx[i] * m.my[i] + c1;
    const double b1 = m.mx[i] * m.mx[i] + m.my[i] * m.my[i] + c1;
    const double cs = (2.0 * sxy + c2) / (sxx + syy + c2);
    out.cs[i] = cs;
    out.ssim[i] = a1 / b1 * cs;
  }
  return out;
}

Tensor ssim_index(const Tensor& x, const Tensor& y, const SsimOptions& opts,
                  SsimComponent component) {
  if (!x.defined() || !y.defined()) throw std::invalid_argument("ssim: undefined operand");
  if (x.rank() != 4 || x.shape() != y.shape()) {
    throw std::invalid_argument("ssim: operands must share a rank-4 shape, got " +
                                shape_to_string(x.shape()) + " and " +
                                shape_to_string(y.shape()));
  }
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  check_window(h, w, opts);
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t plane = h * w;

  double total = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    const auto maps = ssim_maps(x.data().subspan(p * plane, plane),
                                y.data().subspan(p * plane, plane), h, w, opts);
    const auto& values = component == SsimComponent::Full ? maps.ssim : maps.cs;
    double s = 0.0;
    for (double v : values) s += v;
    total += s / static_cast<double>(values.size());
  }
  const double value = total / static_cast<double>(planes);

  return Tensor::make_result(
      Shape{1}, {value}, {x, y}, "ssim_index",
      [opts, component, h, w, planes, plane](detail::Node& self) {
        double* gx = self.parent_grad(0);
        double* gy = self.parent_grad(1);
        if (!gx && !gy) return;
        const auto& xv = self.parents[0]->values;
        const auto& yv = self.parents[1]->values;
        const auto taps = gaussian_taps(opts.window, opts.sigma);
        const double c1 = opts.c1();
        const double c2 = opts.c2();
        const std::size_t n = (h - opts.window + 1) * (w - opts.window + 1);
        const double scale = self.grad[0] / (static_cast<double>(planes) * static_cast<double>(n));
        std::vector<double> d_mx(n), d_my(n), d_e2(n), d_exy(n);
        std::vector<double> acc_x(plane), acc_y(plane), acc_e2(plane), acc_exy(plane);
        for (std::size_t p = 0; p < planes; ++p) {
          const double* xp = xv.data() + p * plane;
          const double* yp = yv.data() + p * plane;
          const Moments m = local_moments(xp, yp, h, w, taps);
          for (std::size_t i = 0; i < n; ++i) {
            const double mx = m.mx[i];
            const double my = m.my[i];
            const double sxx = m.exx[i] - mx * mx;
            const double syy = m.eyy[i] - my * my;
            const double sxy = m.exy[i] - mx * my;
            const double a2 = 2.0 * sxy + c2;
            const double b2 = sxx + syy + c2;
            const double cs = a2 / b2;
            if (component == SsimComponent::Full) {
              const double a1 = 2.0 * mx * my + c1;
              const double b1 = mx * mx + my * my + c1;
              const double s = a1 * a2 / (b1 * b2);
              const double mixed = 2.0 * (a2 - a1) / (b1 * b2);
              const double curv = 2.0 * s * (1.0 / b1 - 1.0 / b2);
              d_mx[i] = scale * (my * mixed - mx * curv);
              d_my[i] = scale * (mx * mixed - my * curv);
              d_e2[i] = scale * (-s / b2);
              d_exy[i] = scale * (2.0 * a1 / (b1 * b2));
            } else {
              d_mx[i] = scale * (2.0 * mx * cs - 2.0 * my) / b2;
              d_my[i] = scale * (2.0 * my * cs - 2.0 * mx) / b2;
              d_e2[i] = scale * (-cs / b2);
              d_exy[i] = scale * (2.0 / b2);
            }
          }
          std::fill(acc_e2.begin(), acc_e2.end(), 0.0);
          std::fill(acc_exy.begin(), acc_exy.end(), 0.0);
          filter_valid_adjoint_add(d_e2, h, w, taps, acc_e2.data());
          filter_valid_adjoint_add(d_exy, h, w, taps, acc_exy.data());
          if (gx) {
            std::fill(acc_x.begin(), acc_x.end(), 0.0);
            filter_valid_adjoint_add(d_mx, h, w, taps, acc_x.data());
            double* g = gx + p * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              g[i] += acc_x[i] + 2.0 * xp[i] * acc_e2[i] + yp[i] * acc_exy[i];
            }
          }
          if (gy) {
            std::fill(acc_y.begin(), acc_y.end(), 0.0);
            filter_valid_adjoint_add(d_my, h, w, taps, acc_y.data());
            double* g = gy + p * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              g[i] += acc_y[i] + 2.0 * yp[i] * acc_e2[i] + xp[i] * acc_exy[i];
            }
          }
        }
      });
}

}  // namespace remar
