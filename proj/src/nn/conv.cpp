#include "linesight/errors.hpp"
#include "linesight/nn.hpp"

#include <cmath>
#include <string>

namespace linesight::nn {

using imagecore::shape_to_string;

Padding Padding::same(std::size_t kh, std::size_t kw, std::size_t rate) {
  const std::size_t ph = rate * (kh - 1) / 2;
  const std::size_t pw = rate * (kw - 1) / 2;
  return {ph, rate * (kh - 1) - ph, pw, rate * (kw - 1) - pw};
}

void ConvSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("conv spec: " + msg); };
  if (in_channels == 0 || out_channels == 0) fail("channel counts must be >= 1");
  if (kernel_h == 0 || kernel_w == 0) fail("kernel dims must be >= 1");
  if (stride == 0) fail("stride must be >= 1");
  if (rate == 0) fail("rate must be >= 1");
  if (groups == 0) fail("groups must be >= 1");
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    fail("channels " + std::to_string(in_channels) + "->" + std::to_string(out_channels) +
         " not divisible by groups " + std::to_string(groups));
  }
}

namespace {

std::size_t conv_extent(std::size_t in, std::size_t pad_total, std::size_t k,
                        std::size_t rate, std::size_t stride, const char* axis) {
  const std::size_t span = rate * (k - 1) + 1;
  if (in + pad_total < span) {
    throw DimensionError(std::string("conv ") + axis + ": padded extent " +
                         std::to_string(in + pad_total) +
                         " smaller than dilated kernel extent " + std::to_string(span));
  }
  return (in + pad_total - span) / stride + 1;
}

}  // namespace

std::size_t ConvSpec::out_height(std::size_t in_h) const {
  return conv_extent(in_h, padding.top + padding.bottom, kernel_h, rate, stride, "height");
}

std::size_t ConvSpec::out_width(std::size_t in_w) const {
  return conv_extent(in_w, padding.left + padding.right, kernel_w, rate, stride, "width");
}

ConvSpec depthwise_spec(std::size_t channels, std::size_t k, std::size_t stride,
                        std::size_t rate, Padding padding) {
  return {channels, channels, k, k, stride, rate, channels, padding};
}

ConvSpec pointwise_spec(std::size_t in_channels, std::size_t out_channels) {
  return {in_channels, out_channels, 1, 1, 1, 1, 1, {}};
}

LayerWeights init_weights(const ConvSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  const double taps = static_cast<double>(spec.kernel_h * spec.kernel_w);
  const double fan_in = static_cast<double>(spec.in_channels / spec.groups) * taps;
  const double fan_out = static_cast<double>(spec.out_channels / spec.groups) * taps;
  const double s = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-s, s);
  Tensor kernel(spec.kernel_shape());
  for (double& v : kernel.data()) v = dist(rng);
  return {std::move(kernel), Tensor({spec.out_channels}, 0.0)};
}

namespace {

void check_input(const Tensor& x, const ConvSpec& spec) {
  if (x.rank() != 3 || x.dim(2) != spec.in_channels) {
    throw DimensionError("conv input " + shape_to_string(x.shape()) +
                         " does not match spec with in_channels " +
                         std::to_string(spec.in_channels));
  }
}

void check_kernel(const Tensor& kernel, const ConvSpec& spec) {
  if (kernel.shape() != spec.kernel_shape()) {
    throw DimensionError("conv kernel " + shape_to_string(kernel.shape()) +
                         " does not match expected " +
                         shape_to_string(spec.kernel_shape()));
  }
}

// Reorders [out_c, in_c/g, kh, kw] into [g, kh, kw, in_c/g, out_c/g] so the
// innermost loops run over contiguous output channels.
std::vector<double> to_tap_major(const Tensor& kernel, const ConvSpec& s) {
  const std::size_t icg = s.in_channels / s.groups;
  const std::size_t ocg = s.out_channels / s.groups;
  const std::size_t ntaps = s.kernel_h * s.kernel_w;
  std::vector<double> out(kernel.size());
  const double* src = kernel.data().data();
  for (std::size_t g = 0; g < s.groups; ++g)
    for (std::size_t oc = 0; oc < ocg; ++oc)
      for (std::size_t ic = 0; ic < icg; ++ic)
        for (std::size_t tap = 0; tap < ntaps; ++tap) {
          out[((g * ntaps + tap) * icg + ic) * ocg + oc] = *src++;
        }
  return out;
}

// [g, kh, kw, out_c/g, in_c/g]: contiguous input channels.
std::vector<double> to_tap_major_transposed(const Tensor& kernel, const ConvSpec& s) {
  const std::size_t icg = s.in_channels / s.groups;
  const std::size_t ocg = s.out_channels / s.groups;
  const std::size_t ntaps = s.kernel_h * s.kernel_w;
  std::vector<double> out(kernel.size());
  const double* src = kernel.data().data();
  for (std::size_t g = 0; g < s.groups; ++g)
    for (std::size_t oc = 0; oc < ocg; ++oc)
      for (std::size_t ic = 0; ic < icg; ++ic)
        for (std::size_t tap = 0; tap < ntaps; ++tap) {
          out[((g * ntaps + tap) * ocg + oc) * icg + ic] = *src++;
        }
  return out;
}

Tensor from_tap_major(const std::vector<double>& taps, const ConvSpec& s) {
  const std::size_t icg = s.in_channels / s.groups;
  const std::size_t ocg = s.out_channels / s.groups;
  const std::size_t ntaps = s.kernel_h * s.kernel_w;
  Tensor out(s.kernel_shape());
  double* dst = out.data().data();
  for (std::size_t g = 0; g < s.groups; ++g)
    for (std::size_t oc = 0; oc < ocg; ++oc)
      for (std::size_t ic = 0; ic < icg; ++ic)
        for (std::size_t tap = 0; tap < ntaps; ++tap) {
          *dst++ = taps[((g * ntaps + tap) * icg + ic) * ocg + oc];
        }
  return out;
}

// Visits every (output pixel, kernel tap) pair whose input pixel lies inside
// the unpadded input, passing flat offsets of the input pixel, the output
// pixel and the tap index ky*kw+kx.
template <typename Fn>
void for_each_tap(const ConvSpec& s, std::size_t in_h, std::size_t in_w,
                  std::size_t out_h, std::size_t out_w, Fn&& fn) {
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const std::size_t opix = oy * out_w + ox;
      for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
        const long iy = static_cast<long>(oy * s.stride + ky * s.rate) -
                        static_cast<long>(s.padding.top);
        if (iy < 0 || iy >= static_cast<long>(in_h)) continue;
        for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
          const long ix = static_cast<long>(ox * s.stride + kx * s.rate) -
                          static_cast<long>(s.padding.left);
          if (ix < 0 || ix >= static_cast<long>(in_w)) continue;
          fn(static_cast<std::size_t>(iy) * in_w + static_cast<std::size_t>(ix), opix,
             ky * s.kernel_w + kx);
        }
      }
    }
  }
}

// grad_in[H,W,Cin] = sum over taps of K^T * grad_out; shared by the conv input
// gradient and the transposed convolution. `taps` is in the transposed layout.
Tensor input_gradient(const Tensor& grad_out, const ConvSpec& s,
                      const std::vector<double>& taps, std::size_t in_h,
                      std::size_t in_w) {
  const std::size_t out_h = grad_out.dim(0), out_w = grad_out.dim(1);
  const std::size_t cin = s.in_channels, cout = s.out_channels;
  const std::size_t icg = cin / s.groups, ocg = cout / s.groups;
  const std::size_t ntaps = s.kernel_h * s.kernel_w;
  Tensor dx({in_h, in_w, cin}, 0.0);
  double* dxd = dx.data().data();
  const double* god = grad_out.data().data();
  for_each_tap(s, in_h, in_w, out_h, out_w,
               [&](std::size_t ipix, std::size_t opix, std::size_t tap) {
                 const double* gp = god + opix * cout;
                 double* dp = dxd + ipix * cin;
                 for (std::size_t g = 0; g < s.groups; ++g) {
                   const double* kg = taps.data() + ((g * ntaps + tap) * ocg) * icg;
                   const double* gg = gp + g * ocg;
                   double* dg = dp + g * icg;
                   for (std::size_t oc = 0; oc < ocg; ++oc) {
                     const double gv = gg[oc];
                     if (gv == 0.0) continue;
                     const double* kp = kg + oc * icg;
                     for (std::size_t ic = 0; ic < icg; ++ic) dg[ic] += gv * kp[ic];
                   }
                 }
               });
  return dx;
}

// dK in tap-major layout for <grad_out, conv(x; K)>.
std::vector<double> kernel_gradient(const Tensor& x, const ConvSpec& s,
                                    const Tensor& grad_out) {
  const std::size_t out_h = grad_out.dim(0), out_w = grad_out.dim(1);
  const std::size_t cin = s.in_channels, cout = s.out_channels;
  const std::size_t icg = cin / s.groups, ocg = cout / s.groups;
  const std::size_t ntaps = s.kernel_h * s.kernel_w;
  std::vector<double> dk(s.out_channels * icg * ntaps, 0.0);
  const double* xd = x.data().data();
  const double* god = grad_out.data().data();
  for_each_tap(s, x.dim(0), x.dim(1), out_h, out_w,
               [&](std::size_t ipix, std::size_t opix, std::size_t tap) {
                 const double* xp = xd + ipix * cin;
                 const double* gp = god + opix * cout;
                 for (std::size_t g = 0; g < s.groups; ++g) {
                   double* kg = dk.data() + ((g * ntaps + tap) * icg) * ocg;
                   const double* gg = gp + g * ocg;
                   for (std::size_t ic = 0; ic < icg; ++ic) {
                     const double xv = xp[g * icg + ic];
                     if (xv == 0.0) continue;
                     double* kp = kg + ic * ocg;
                     for (std::size_t oc = 0; oc < ocg; ++oc) kp[oc] += xv * gg[oc];
                   }
                 }
               });
  return dk;
}

}  // namespace

Tensor conv2d(const Tensor& x, const ConvSpec& s, const LayerWeights& w) {
  s.validate();
  check_input(x, s);
  check_kernel(w.kernel, s);
  if (w.bias.shape() != Shape{s.out_channels}) {
    throw DimensionError("conv bias " + shape_to_string(w.bias.shape()) +
                         " does not match out_channels " + std::to_string(s.out_channels));
  }
  const std::size_t in_h = x.dim(0), in_w = x.dim(1);
  const std::size_t out_h = s.out_height(in_h), out_w = s.out_width(in_w);
  const std::size_t cin = s.in_channels, cout = s.out_channels;
  const std::size_t icg = cin / s.groups, ocg = cout / s.groups;
  const std::size_t ntaps = s.kernel_h * s.kernel_w;
  const auto taps = to_tap_major(w.kernel, s);

  Tensor y({out_h, out_w, cout});
  double* yd = y.data().data();
  for (std::size_t p = 0; p < out_h * out_w; ++p) {
    for (std::size_t c = 0; c < cout; ++c) yd[p * cout + c] = w.bias[c];
  }
  const double* xd = x.data().data();
  for_each_tap(s, in_h, in_w, out_h, out_w,
               [&](std::size_t ipix, std::size_t opix, std::size_t tap) {
                 const double* xp = xd + ipix * cin;
                 double* yp = yd + opix * cout;
                 for (std::size_t g = 0; g < s.groups; ++g) {
                   const double* kg = taps.data() + ((g * ntaps + tap) * icg) * ocg;
                   double* yg = yp + g * ocg;
                   for (std::size_t ic = 0; ic < icg; ++ic) {
                     const double xv = xp[g * icg + ic];
                     const double* kp = kg + ic * ocg;
                     for (std::size_t oc = 0; oc < ocg; ++oc) yg[oc] += xv * kp[oc];
                   }
                 }
               });
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const ConvSpec& s, const Tensor& kernel,
                          const Tensor& grad_out) {
  s.validate();
  check_input(x, s);
  check_kernel(kernel, s);
  const Shape expected{s.out_height(x.dim(0)), s.out_width(x.dim(1)), s.out_channels};
  if (grad_out.shape() != expected) {
    throw DimensionError("conv grad_out " + shape_to_string(grad_out.shape()) +
                         " does not match output " + shape_to_string(expected));
  }
  ConvGrads g;
  g.input = input_gradient(grad_out, s, to_tap_major_transposed(kernel, s), x.dim(0), x.dim(1));
  g.kernel = from_tap_major(kernel_gradient(x, s, grad_out), s);
  g.bias = Tensor({s.out_channels}, 0.0);
  for (std::size_t p = 0; p < grad_out.size() / s.out_channels; ++p) {
    for (std::size_t c = 0; c < s.out_channels; ++c) {
      g.bias[c] += grad_out[p * s.out_channels + c];
    }
  }
  return g;
}

std::size_t transposed_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                              std::size_t rate, std::size_t pad_total) {
  const std::size_t span = (in - 1) * stride + rate * (kernel - 1) + 1;
  if (span <= pad_total) {
    throw DimensionError("transposed conv: padding " + std::to_string(pad_total) +
                         " consumes the whole output extent " + std::to_string(span));
  }
  return span - pad_total;
}

Tensor transposed_conv2d(const Tensor& y, const ConvSpec& s, const Tensor& kernel,
                         std::size_t out_h, std::size_t out_w) {
  s.validate();
  check_kernel(kernel, s);
  const Shape expected{s.out_height(out_h), s.out_width(out_w), s.out_channels};
  if (y.shape() != expected) {
    throw DimensionError("transposed conv input " + shape_to_string(y.shape()) +
                         " does not match " + shape_to_string(expected) +
                         " implied by output " + std::to_string(out_h) + "x" +
                         std::to_string(out_w));
  }
  return input_gradient(y, s, to_tap_major_transposed(kernel, s), out_h, out_w);
}

Tensor transposed_conv2d(const Tensor& y, const ConvSpec& s, const Tensor& kernel) {
  if (y.rank() != 3) {
    throw DimensionError("transposed conv input must be [H,W,C], got " +
                         shape_to_string(y.shape()));
  }
  const std::size_t out_h = transposed_extent(y.dim(0), s.kernel_h, s.stride, s.rate,
                                              s.padding.top + s.padding.bottom);
  const std::size_t out_w = transposed_extent(y.dim(1), s.kernel_w, s.stride, s.rate,
                                              s.padding.left + s.padding.right);
  return transposed_conv2d(y, s, kernel, out_h, out_w);
}

TransposedConvGrads transposed_conv2d_backward(const Tensor& y, const ConvSpec& s,
                                               const Tensor& kernel,
                                               const Tensor& grad_out) {
  s.validate();
  check_kernel(kernel, s);
  check_input(grad_out, s);
  const Shape expected{s.out_height(grad_out.dim(0)), s.out_width(grad_out.dim(1)),
                       s.out_channels};
  if (y.shape() != expected) {
    throw DimensionError("transposed conv backward: input " + shape_to_string(y.shape()) +
                         " vs expected " + shape_to_string(expected));
  }
  // The layer is linear: d/dy is the forward conv of grad_out and d/dK is the
  // conv kernel gradient with the roles of input and output exchanged.
  LayerWeights no_bias{kernel, Tensor({s.out_channels}, 0.0)};
  TransposedConvGrads g;
  g.input = conv2d(grad_out, s, no_bias);
  g.kernel = from_tap_major(kernel_gradient(grad_out, s, y), s);
  return g;
}

void SeparableConv::validate() const {
  depthwise.validate();
  pointwise.validate();
  if (!depthwise.is_depthwise()) {
    throw ValidationError("separable conv: depthwise stage needs groups == channels");
  }
  if (!pointwise.is_pointwise() || pointwise.groups != 1) {
    throw ValidationError("separable conv: pointwise stage must be an ungrouped 1x1 conv");
  }
  if (pointwise.in_channels != depthwise.out_channels) {
    throw DimensionError("separable conv: pointwise in_channels " +
                         std::to_string(pointwise.in_channels) +
                         " != depthwise channels " + std::to_string(depthwise.out_channels));
  }
}

Tensor separable_conv2d(const Tensor& x, const SeparableConv& c) {
  c.validate();
  return conv2d(conv2d(x, c.depthwise, c.depthwise_weights), c.pointwise,
                c.pointwise_weights);
}

}  // namespace linesight::nn
