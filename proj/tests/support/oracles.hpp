#pragma once

// Test-only reference implementations. These are written independently of
// the library kernels (direct loops straight from the definitions) and are
// the ground truth the library is compared against.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "linesight/nn.hpp"

namespace linesight::testing {

using imagecore::Tensor;

inline Tensor random_tensor(const imagecore::Shape& shape, std::mt19937_64& rng,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Literal sliding-window cross-correlation with zero padding, dilation and
// groups, following the output size formula
//   floor((H + pad - rate*(k-1) - 1) / stride) + 1.
inline Tensor naive_conv2d(const Tensor& x, const nn::ConvSpec& s, const Tensor& kernel,
                           const Tensor& bias) {
  const long H = static_cast<long>(x.dim(0)), W = static_cast<long>(x.dim(1));
  const long kh = static_cast<long>(s.kernel_h), kw = static_cast<long>(s.kernel_w);
  const long rate = static_cast<long>(s.rate), stride = static_cast<long>(s.stride);
  const long pt = static_cast<long>(s.padding.top), pl = static_cast<long>(s.padding.left);
  const long OH = (H + pt + static_cast<long>(s.padding.bottom) - rate * (kh - 1) - 1) / stride + 1;
  const long OW = (W + pl + static_cast<long>(s.padding.right) - rate * (kw - 1) - 1) / stride + 1;
  const long icg = static_cast<long>(s.in_channels / s.groups);
  const long ocg = static_cast<long>(s.out_channels / s.groups);
  Tensor y({static_cast<std::size_t>(OH), static_cast<std::size_t>(OW), s.out_channels});
  for (long oy = 0; oy < OH; ++oy)
    for (long ox = 0; ox < OW; ++ox)
      for (long oc = 0; oc < static_cast<long>(s.out_channels); ++oc) {
        const long g = oc / ocg;
        double acc = bias.empty() ? 0.0 : bias[oc];
        for (long ic = 0; ic < icg; ++ic)
          for (long ky = 0; ky < kh; ++ky)
            for (long kx = 0; kx < kw; ++kx) {
              const long iy = oy * stride - pt + ky * rate;
              const long ix = ox * stride - pl + kx * rate;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              const double xv = x.at(iy, ix, g * icg + ic);
              const double kv = kernel[((oc * icg + ic) * kh + ky) * kw + kx];
              acc += xv * kv;
            }
        y.at(oy, ox, oc) = acc;
      }
  return y;
}

// Central finite-difference gradient of a scalar function at x.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double h = 1e-5) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)
inline double max_relative_error(const Tensor& analytic, const Tensor& numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

}  // namespace linesight::testing
