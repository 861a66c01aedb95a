#include "remar/verify.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "remar/data.hpp"
#include "remar/losses.hpp"
#include "remar/metrics.hpp"
#include "remar/network.hpp"
#include "remar/ops.hpp"
#include "remar/trainer.hpp"

namespace remar {

namespace oracle {

Spectrum direct_dft(std::span<const double> x, std::size_t h, std::size_t w) {
  Spectrum s{std::vector<double>(h * w, 0.0), std::vector<double>(h * w, 0.0)};
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      double re = 0.0, im = 0.0;
      for (std::size_t a = 0; a < h; ++a) {
        for (std::size_t b = 0; b < w; ++b) {
          const double phase = -2.0 * std::numbers::pi *
                               (static_cast<double>((u * a) % h) / static_cast<double>(h) +
                                static_cast<double>((v * b) % w) / static_cast<double>(w));
          re += x[a * w + b] * std::cos(phase);
          im += x[a * w + b] * std::sin(phase);
        }
      }
      s.real[u * w + v] = re;
      s.imag[u * w + v] = im;
    }
  }
  return s;
}

double ssim(std::span<const double> x, std::span<const double> y, std::size_t h, std::size_t w,
            const SsimOptions& opts, std::span<const std::uint8_t> mask, bool contrast_structure) {
  const std::size_t k = opts.window;
  std::vector<double> g(k);
  double gsum = 0.0;
  const double c = (static_cast<double>(k) - 1.0) / 2.0;
  for (std::size_t i = 0; i < k; ++i) {
    g[i] = std::exp(-(static_cast<double>(i) - c) * (static_cast<double>(i) - c) /
                    (2.0 * opts.sigma * opts.sigma));
    gsum += g[i];
  }
  const double c1 = (opts.k1 * opts.data_range) * (opts.k1 * opts.data_range);
  const double c2 = (opts.k2 * opts.data_range) * (opts.k2 * opts.data_range);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i + k <= h; ++i) {
    for (std::size_t j = 0; j + k <= w; ++j) {
      if (!mask.empty() && !mask[(i + k / 2) * w + j + k / 2]) continue;
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) {
          const double wt = g[a] * g[b] / (gsum * gsum);
          const double xv = x[(i + a) * w + j + b];
          const double yv = y[(i + a) * w + j + b];
          mx += wt * xv;
          my += wt * yv;
          sxx += wt * xv * xv;
          syy += wt * yv * yv;
          sxy += wt * xv * yv;
        }
      }
      const double vx = sxx - mx * mx;
      const double vy = syy - my * my;
      const double cov = sxy - mx * my;
      const double cs = (2 * cov + c2) / (vx + vy + c2);
      const double l = (2 * mx * my + c1) / (mx * mx + my * my + c1);
      total += contrast_structure ? cs : l * cs;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double msssim(std::span<const double> x, std::span<const double> y, std::size_t n,
              std::size_t scales, const SsimOptions& opts) {
  static const double canonical[] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  double wsum = 0.0;
  for (std::size_t s = 0; s < scales; ++s) wsum += canonical[s];
  std::vector<double> a(x.begin(), x.end()), b(y.begin(), y.end());
  double result = 1.0;
  for (std::size_t s = 0; s < scales; ++s) {
    const bool last = s + 1 == scales;
    const double term = ssim(a, b, n, n, opts, {}, !last);
    result *= std::pow(std::max(term, 1e-6), canonical[s] / wsum);
    if (!last) {
      const std::size_t m = n / 2;
      std::vector<double> a2(m * m), b2(m * m);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          a2[i * m + j] = (a[2 * i * n + 2 * j] + a[2 * i * n + 2 * j + 1] +
                           a[(2 * i + 1) * n + 2 * j] + a[(2 * i + 1) * n + 2 * j + 1]) / 4.0;
          b2[i * m + j] = (b[2 * i * n + 2 * j] + b[2 * i * n + 2 * j + 1] +
                           b[(2 * i + 1) * n + 2 * j] + b[(2 * i + 1) * n + 2 * j + 1]) / 4.0;
        }
      }
      a = std::move(a2);
      b = std::move(b2);
      n = m;
    }
  }
  return result;
}

double masked_psnr(std::span<const double> x, std::span<const double> y,
                   std::span<const std::uint8_t> mask, double data_range) {
  double sse = 0.0;
  double n = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mask[i]) {
      sse += (x[i] - y[i]) * (x[i] - y[i]);
      n += 1.0;
    }
  }
  return 10.0 * std::log10(data_range * data_range / (sse / n));
}

double ffl(std::span<const double> x, std::span<const double> y, std::size_t n, double alpha,
           double beta) {
  const auto fx = direct_dft(x, n, n);
  const auto fy = direct_dft(y, n, n);
  std::vector<double> d2(n * n), z(n * n);
  double zmax = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) {
    const double re = fx.real[i] - fy.real[i];
    const double im = fx.imag[i] - fy.imag[i];
    d2[i] = re * re + im * im;
    z[i] = std::pow(std::sqrt(d2[i]), alpha);
    zmax = std::max(zmax, z[i]);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) total += (zmax > 0 ? z[i] / zmax : 0.0) * d2[i];
  return beta * total / static_cast<double>(n * n);
}

}  // namespace oracle

GradCheck check_gradients(const std::vector<Tensor>& leaves, const std::function<Tensor()>& loss,
                          double step) {
  for (const auto& l : leaves) const_cast<Tensor&>(l).zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& l : leaves) {
    if (l.has_grad()) {
      analytic.emplace_back(l.grad().begin(), l.grad().end());
    } else {
      analytic.emplace_back(l.numel(), 0.0);
    }
  }
  std::vector<std::vector<double>> numeric;
  double peak = 0.0;
  for (const auto& leaf : leaves) {
    Tensor l = leaf;
    auto data = l.mutable_data();
    std::vector<double> n(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + step;
      const double up = loss().item();
      data[i] = saved - step;
      const double down = loss().item();
      data[i] = saved;
      n[i] = (up - down) / (2.0 * step);
      peak = std::max(peak, std::abs(n[i]));
    }
    numeric.push_back(std::move(n));
  }
  GradCheck r;
  for (std::size_t t = 0; t < leaves.size(); ++t) {
    for (std::size_t i = 0; i < numeric[t].size(); ++i) {
      const double a = analytic[t][i];
      const double n = numeric[t][i];
      const double denom = std::max({std::abs(a), std::abs(n), 1e-3 * peak, 1e-8});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(a - n) / denom);
      ++r.elements;
    }
  }
  return r;
}

namespace {

std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                                  double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

Tensor leaf(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), random_values(rng, n, lo, hi), true);
}

// Scalar projection sum(t * r) with a fixed random r.
Tensor project(const Tensor& t, const Tensor& r) { return ops::sum(ops::mul(t, r)); }

Tensor probe(std::mt19937_64& rng, const Shape& shape) {
  return Tensor(shape, random_values(rng, shape_numel(shape)));
}

struct GradCase {
  std::string name;
  double tolerance;
  // Builds leaves and a loss closure for one seed.
  std::function<std::pair<std::vector<Tensor>, std::function<Tensor()>>(std::mt19937_64&)> make;
};

std::vector<GradCase> grad_cases() {
  using Leaves = std::vector<Tensor>;
  using Fn = std::function<Tensor()>;
  using Made = std::pair<Leaves, Fn>;
  std::vector<GradCase> cases;
  const double tol = 1e-4;

  cases.push_back({"conv2d", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {2, 2, 6, 6});
    auto w = leaf(rng, {3, 2, 3, 3});
    auto b = leaf(rng, {3});
    auto r = probe(rng, {2, 3, 6, 6});
    return {{x, w, b}, [=] { return project(ops::conv2d(x, w, b, 1, 1), r); }};
  }});
  cases.push_back({"conv2d_stride2", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {1, 2, 6, 6});
    auto w = leaf(rng, {2, 2, 3, 3});
    auto b = leaf(rng, {2});
    auto r = probe(rng, {1, 2, 3, 3});
    return {{x, w, b}, [=] { return project(ops::conv2d(x, w, b, 2, 1), r); }};
  }});
  cases.push_back({"depthwise_conv2d", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {2, 3, 5, 5});
    auto w = leaf(rng, {3, 1, 3, 3});
    auto b = leaf(rng, {3});
    auto r = probe(rng, {2, 3, 5, 5});
    return {{x, w, b}, [=] { return project(ops::depthwise_conv2d(x, w, b, 1), r); }};
  }});
  cases.push_back({"pointwise_conv2d", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {2, 3, 4, 4});
    auto w = leaf(rng, {4, 3, 1, 1});
    auto b = leaf(rng, {4});
    auto r = probe(rng, {2, 4, 4, 4});
    return {{x, w, b}, [=] { return project(ops::pointwise_conv2d(x, w, b), r); }};
  }});
  cases.push_back({"batchnorm2d", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {3, 2, 4, 4});
    auto g = leaf(rng, {2}, 0.5, 1.5);
    auto b = leaf(rng, {2});
    auto r = probe(rng, {3, 2, 4, 4});
    auto stats = std::make_shared<ops::BatchNormStats>(2);
    return {{x, g, b}, [=] { return project(ops::batchnorm2d(x, g, b, *stats, Mode::Train), r); }};
  }});
  cases.push_back({"relu", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {2, 2, 4, 4});
    auto r = probe(rng, x.shape());
    return {{x}, [=] { return project(ops::relu(x), r); }};
  }});
  cases.push_back({"sigmoid", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {2, 2, 4, 4}, -3.0, 3.0);
    auto r = probe(rng, x.shape());
    return {{x}, [=] { return project(ops::sigmoid(x), r); }};
  }});
  cases.push_back({"abs_square_pow", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {2, 8});
    auto p = leaf(rng, {2, 8}, 0.5, 1.5);
    auto r = probe(rng, {2, 8});
    return {{x, p}, [=] {
              return ops::add(project(ops::abs(x), r),
                              ops::add(project(ops::square(x), r),
                                       project(ops::pow(p, 0.37), r)));
            }};
  }});
  cases.push_back({"clamp_min_scalar_ops", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {16});
    auto r = probe(rng, {16});
    return {{x}, [=] {
              return project(ops::add_scalar(ops::scalar_mul(ops::clamp_min(x, 0.05), 2.5), 1.0),
                             r);
            }};
  }});
  cases.push_back({"broadcast_add_sub_mul", tol, [](std::mt19937_64& rng) -> Made {
    auto a = leaf(rng, {2, 3, 4, 4});
    auto c = leaf(rng, {3});
    auto bc = leaf(rng, {2, 3});
    auto s = leaf(rng, {2, 1, 4, 4});
    auto hw = leaf(rng, {4, 4});
    auto k = leaf(rng, {1});
    auto r = probe(rng, a.shape());
    return {{a, c, bc, s, hw, k}, [=] {
              auto t = ops::add(a, c);
              t = ops::mul(t, bc);
              t = ops::sub(t, s);
              t = ops::mul(t, hw);
              t = ops::add(t, k);
              return project(t, r);
            }};
  }});
  cases.push_back({"sum_mean", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {3, 5});
    return {{x}, [=] { return ops::add(ops::sum(ops::square(x)), ops::mean(ops::abs(x))); }};
  }});
  cases.push_back({"global_avg_pool", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {2, 3, 4, 4});
    auto r = probe(rng, {2, 3});
    return {{x}, [=] { return project(ops::global_avg_pool(x), r); }};
  }});
  cases.push_back({"avg_pool2x", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {2, 2, 6, 6});
    auto r = probe(rng, {2, 2, 3, 3});
    return {{x}, [=] { return project(ops::avg_pool2x(x), r); }};
  }});
  cases.push_back({"fully_connected", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {3, 5});
    auto w = leaf(rng, {4, 5});
    auto b = leaf(rng, {4});
    auto r = probe(rng, {3, 4});
    return {{x, w, b}, [=] { return project(ops::fully_connected(x, w, b), r); }};
  }});
  cases.push_back({"upsample_nearest2x", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {2, 2, 3, 3});
    auto r = probe(rng, {2, 2, 6, 6});
    return {{x}, [=] { return project(ops::upsample_nearest2x(x), r); }};
  }});
  cases.push_back({"dft2d", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {2, 1, 6, 5});
    auto rr = probe(rng, x.shape());
    auto ri = probe(rng, x.shape());
    return {{x}, [=] {
              const auto f = ops::dft2d(x);
              return ops::add(project(f.real, rr), project(f.imag, ri));
            }};
  }});
  cases.push_back({"loss.l1_weighted", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {2, 1, 8, 8});
    auto t = probe(rng, x.shape());
    auto w = Tensor(x.shape(), random_values(rng, x.numel(), 0.1, 100.0));
    return {{x}, [=] { return l1_weighted(x, t, w); }};
  }});
  cases.push_back({"loss.mse", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {2, 1, 8, 8});
    auto t = probe(rng, x.shape());
    return {{x}, [=] { return mse_loss(x, t); }};
  }});
  cases.push_back({"loss.ssim", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {1, 2, 14, 13});
    auto t = leaf(rng, {1, 2, 14, 13});
    return {{x, t}, [=] { return ssim_loss(x, t); }};
  }});
  cases.push_back({"loss.msssim", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {1, 1, 24, 24});
    auto t = Tensor(x.shape(), random_values(rng, x.numel()));
    // Correlated target keeps every per-scale term above the clamp floor.
    auto xs = x.data();
    auto tv = t.mutable_data();
    for (std::size_t i = 0; i < tv.size(); ++i) tv[i] = 0.7 * xs[i] + 0.3 * tv[i];
    return {{x}, [=] { return msssim_loss(x, t, 2); }};
  }});
  cases.push_back({"loss.ffl", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {2, 1, 8, 8});
    auto t = probe(rng, x.shape());
    // The focus weights are a constant of differentiation, so they are frozen
    // at the unperturbed point for the finite differences.
    auto z = ffl_focus(x, t, 0.5);
    return {{x}, [=] { return ffl_loss_with_focus(x, t, z, 1.0); }};
  }});
  cases.push_back({"loss.ffl_alpha0", tol, [](std::mt19937_64& rng) -> Made {
    auto x = leaf(rng, {1, 2, 6, 6});
    auto t = probe(rng, x.shape());
    return {{x}, [=] { return ffl_loss(x, t, 0.0, 1.0); }};
  }});
  return cases;
}

CheckResult run_grad_case(const GradCase& c, const VerifyOptions& opts) {
  CheckResult res{"grad." + c.name, 1, true, 0.0, c.tolerance, {}};
  std::size_t elements = 0;
  for (std::size_t s = 0; s < opts.seeds; ++s) {
    std::mt19937_64 rng(opts.base_seed + 7919 * s);
    auto [leaves, fn] = c.make(rng);
    const auto g = check_gradients(leaves, fn);
    res.value = std::max(res.value, g.max_rel_error);
    elements += g.elements;
  }
  res.passed = res.value < c.tolerance;
  res.detail = std::to_string(opts.seeds) + " seeds, " + std::to_string(elements) + " elements";
  return res;
}

CheckResult model_grad_check(const VerifyOptions& opts) {
  CheckResult res{"grad.model_end_to_end", 1, true, 0.0, 1e-3, {}};
  ModelConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 4;
  std::size_t elements = 0;
  for (std::size_t s = 0; s < opts.seeds; ++s) {
    std::mt19937_64 rng(opts.base_seed + 104729 * s);
    ReMarNet net(cfg, rng());
    auto x = leaf(rng, {2, 1, 8, 8});
    auto r = probe(rng, x.shape());
    const std::uint64_t noise_seed = rng();
    std::vector<Tensor> leaves{x};
    for (const auto& p : net.parameters().items()) leaves.push_back(p.tensor);
    const auto g = check_gradients(
        leaves, [&] { return project(net.forward(x, noise_seed, Mode::Train), r); }, 1e-6);
    res.value = std::max(res.value, g.max_rel_error);
    elements += g.elements;
  }
  res.passed = res.value < res.tolerance;
  res.detail = "L=2 base=4, " + std::to_string(opts.seeds) + " seeds, " +
               std::to_string(elements) + " elements";
  return res;
}

class ConvFault {
 public:
  explicit ConvFault(bool on) : on_(on) {
    if (on_) ops::set_conv2d_weight_grad_scale(1.05);
  }
  ~ConvFault() {
    if (on_) ops::set_conv2d_weight_grad_scale(1.0);
  }

 private:
  bool on_;
};

CheckResult make_result(std::string name, int criterion, double value, double tol,
                        std::string detail = {}) {
  return {std::move(name), criterion, value < tol, value, tol, std::move(detail)};
}

}  // namespace

std::vector<CheckResult> gradient_checks(const VerifyOptions& opts) {
  ConvFault fault(opts.inject_conv_fault);
  std::vector<CheckResult> out;
  for (const auto& c : grad_cases()) out.push_back(run_grad_case(c, opts));
  out.push_back(model_grad_check(opts));
  return out;
}

std::vector<CheckResult> oracle_checks(const VerifyOptions& opts) {
  std::vector<CheckResult> out;
  double dft_err = 0, parseval_err = 0, ssim_err = 0, msssim_err = 0, psnr_err = 0,
         mssim_err = 0, ffl_err = 0;
  for (std::size_t s = 0; s < opts.seeds; ++s) {
    std::mt19937_64 rng(opts.base_seed + 31 * s);
    const std::size_t n = 32;
    const auto a = random_values(rng, n * n);
    auto b = random_values(rng, n * n);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.6 * a[i] + 0.4 * b[i];
    Tensor ta({1, 1, n, n}, a);
    Tensor tb({1, 1, n, n}, b);

    const auto spec = ops::dft2d(ta);
    const auto ref = oracle::direct_dft(a, n, n);
    for (std::size_t i = 0; i < n * n; ++i) {
      dft_err = std::max({dft_err, std::abs(spec.real.data()[i] - ref.real[i]),
                          std::abs(spec.imag.data()[i] - ref.imag[i])});
    }

    double sq = 0.0;
    for (std::size_t i = 0; i < n * n; ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    const double ffl0 = ffl_loss(ta, tb, 0.0, 1.0).item();
    parseval_err = std::max(parseval_err, std::abs(ffl0 - sq) / sq);

    ssim_err = std::max(ssim_err, std::abs(ssim_index(ta, tb).item() - oracle::ssim(a, b, n, n)));
    msssim_err = std::max(
        msssim_err, std::abs((1.0 - msssim_loss(ta, tb, 2).item()) - oracle::msssim(a, b, n, 2)));

    std::vector<std::uint8_t> mask(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) mask[i * n + j] = (j + i / 3 >= n / 2) ? 1 : 0;
    }
    psnr_err = std::max(psnr_err, std::abs(masked_psnr(a, b, mask, 2.0).db -
                                           oracle::masked_psnr(a, b, mask, 2.0)));
    mssim_err = std::max(mssim_err, std::abs(masked_ssim(a, b, mask, n, n) -
                                             oracle::ssim(a, b, n, n, {}, mask)));
    ffl_err = std::max(ffl_err,
                       std::abs(ffl_loss(ta, tb, 0.5, 1.0).item() - oracle::ffl(a, b, n, 0.5, 1.0)));
  }
  const std::string seeds = std::to_string(opts.seeds) + " random 32x32 pairs";
  out.push_back(make_result("oracle.dft2d_vs_direct", 2, dft_err, 1e-9, seeds));
  out.push_back(make_result("oracle.ffl_alpha0_parseval", 2, parseval_err, 1e-9, seeds));
  out.push_back(make_result("oracle.ssim", 2, ssim_err, 1e-8, seeds));
  out.push_back(make_result("oracle.msssim", 2, msssim_err, 1e-8, seeds));
  out.push_back(make_result("oracle.masked_psnr", 2, psnr_err, 1e-8, seeds));
  out.push_back(make_result("oracle.masked_ssim", 2, mssim_err, 1e-8, seeds));
  out.push_back(make_result("oracle.ffl", 2, ffl_err, 1e-8, seeds));
  return out;
}

std::vector<CheckResult> invariant_checks(const VerifyOptions& opts) {
  std::vector<CheckResult> out;

  // Parameter counts against the instantiated networks and hand closed forms.
  {
    std::size_t mismatches = 0;
    std::ostringstream detail;
    for (std::size_t levels : {2, 3, 4}) {
      ModelConfig base;
      base.levels = levels;
      base.base_channels = 8;
      for (const auto& v : ablation_presets(base)) {
        ReMarNet net(v.config);
        if (net.parameters().total_size() != parameter_count(v.config)) {
          ++mismatches;
          detail << v.name << "@L" << levels << ' ';
        }
      }
    }
    if (conv_param_count(1, 8, 3) != 80) ++mismatches;
    if (residual_block_param_count(16, 3, true) >= residual_block_param_count(16, 3, false)) {
      ++mismatches;
    }
    out.push_back({"arch.parameter_counts", 3, mismatches == 0, static_cast<double>(mismatches),
                   0.5, mismatches ? detail.str() : "closed forms agree"});
  }

  // Output shape follows input shape.
  {
    std::size_t bad = 0;
    for (std::size_t levels : {2, 3, 4}) {
      ModelConfig cfg;
      cfg.levels = levels;
      cfg.base_channels = 4;
      ReMarNet net(cfg, opts.base_seed);
      for (std::size_t n : {32, 64}) {
        NoGradGuard ng;
        Tensor x({1, 1, n, n}, 0.1);
        if (net.forward(x, 0, Mode::Eval).shape() != x.shape()) ++bad;
      }
    }
    out.push_back({"arch.output_shape", 3, bad == 0, static_cast<double>(bad), 0.5,
                   "sizes {32,64} x L {2,3,4}"});
  }

  // Determinism of a short training run.
  {
    PhantomSpec ps;
    ps.size = 32;
    const auto pairs = generate_dataset(opts.base_seed, ps, 2, 4);
    std::vector<std::size_t> idx(pairs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    TrainConfig tc;
    tc.model.levels = 2;
    tc.model.base_channels = 4;
    tc.max_steps = 4;
    tc.val_fraction = 0.0;
    tc.seed = opts.base_seed;
    const auto examples = make_examples(pairs, idx, tc.loss);
    const auto r1 = train(tc, examples);
    const auto r2 = train(tc, examples);
    bool same = r1.steps.size() == r2.steps.size();
    for (std::size_t i = 0; same && i < r1.steps.size(); ++i) same = r1.steps[i].total == r2.steps[i].total;
    out.push_back({"determinism.train_steps", 6, same, same ? 0.0 : 1.0, 0.5,
                   std::to_string(r1.steps.size()) + " steps compared bitwise"});
  }
  return out;
}

std::vector<CheckResult> run_verify(const VerifyOptions& opts) {
  auto out = gradient_checks(opts);
  for (auto& r : oracle_checks(opts)) out.push_back(std::move(r));
  for (auto& r : invariant_checks(opts)) out.push_back(std::move(r));
  return out;
}

void print_check_table(std::ostream& out, const std::vector<CheckResult>& results) {
  std::size_t width = 5;
  for (const auto& r : results) width = std::max(width, r.name.size());
  out << std::left << std::setw(static_cast<int>(width) + 2) << "check"
      << "status  value        tolerance  detail\n";
  for (const auto& r : results) {
    out << std::left << std::setw(static_cast<int>(width) + 2) << r.name
        << (r.passed ? "PASS    " : "FAIL    ") << std::setw(12) << std::scientific
        << std::setprecision(3) << r.value << ' ' << std::setw(10) << r.tolerance << ' '
        << r.detail << '\n';
  }
  out << std::defaultfloat << std::right;
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

}  // namespace remar
