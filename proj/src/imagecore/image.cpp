#include "linesight/errors.hpp"
#include "linesight/imagecore.hpp"

#include <algorithm>
#include <cmath>

namespace linesight::imagecore {

namespace {

void check_channels(std::size_t channels) {
  if (channels != 1 && channels != 3) {
    throw ValidationError("image channels must be 1 or 3, got " +
                          std::to_string(channels));
  }
}

}  // namespace

Image::Image(std::size_t height, std::size_t width, std::size_t channels,
             double fill)
    : height_(height),
      width_(width),
      channels_(channels),
      pixels_({height, width, channels}, std::clamp(fill, 0.0, 1.0)) {
  check_channels(channels);
}

Image::Image(Tensor pixels) : pixels_(std::move(pixels)) {
  if (pixels_.rank() != 3) {
    throw DimensionError("image tensor must be [H,W,C], got " +
                         shape_to_string(pixels_.shape()));
  }
  height_ = pixels_.dim(0);
  width_ = pixels_.dim(1);
  channels_ = pixels_.dim(2);
  check_channels(channels_);
  for (double v : pixels_.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ValidationError("image pixel outside [0,1]: " + std::to_string(v));
    }
  }
}

void Image::set(std::size_t y, std::size_t x, std::size_t c, double value) {
  pixels_.at(y, x, c) = std::clamp(value, 0.0, 1.0);
}

Image Image::crop(std::size_t y0, std::size_t x0, std::size_t h,
                  std::size_t w) const {
  if (h == 0 || w == 0 || y0 + h > height_ || x0 + w > width_) {
    throw DimensionError("crop [" + std::to_string(y0) + "+" +
                         std::to_string(h) + ", " + std::to_string(x0) + "+" +
                         std::to_string(w) + "] outside image " +
                         std::to_string(height_) + "x" +
                         std::to_string(width_));
  }
  Image out(h, w, channels_);
  for (std::size_t y = 0; y < h; ++y) {
    const double* src = &pixels_.data()[((y0 + y) * width_ + x0) * channels_];
    std::copy(src, src + w * channels_,
              &out.pixels_.data()[y * w * channels_]);
  }
  return out;
}

LabelMap::LabelMap(std::size_t height, std::size_t width, int fill)
    : height_(height), width_(width), labels_(height * width, fill) {}

LabelMap::LabelMap(std::size_t height, std::size_t width,
                   std::vector<int> labels)
    : height_(height), width_(width), labels_(std::move(labels)) {
  if (labels_.size() != height * width) {
    throw DimensionError("label map " + std::to_string(height) + "x" +
                         std::to_string(width) + " given " +
                         std::to_string(labels_.size()) + " labels");
  }
}

Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) {
    throw DimensionError("resize target must be at least 1x1, got " +
                         std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  if (out_h == img.height() && out_w == img.width()) return img;

  const std::size_t in_h = img.height();
  const std::size_t in_w = img.width();
  const std::size_t c_count = img.channels();
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);

  struct Tap {
    std::size_t i0, i1;
    double frac;
  };
  auto taps = [](std::size_t out, std::size_t in, double scale) {
    std::vector<Tap> t(out);
    for (std::size_t d = 0; d < out; ++d) {
      double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      const std::size_t i1 = std::min(i0 + 1, in - 1);
      t[d] = {i0, i1, src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(out_h, in_h, sy);
  const auto tx = taps(out_w, in_w, sx);

  Tensor out({out_h, out_w, c_count});
  const Tensor& src = img.pixels();
  for (std::size_t y = 0; y < out_h; ++y) {
    const Tap& a = ty[y];
    for (std::size_t x = 0; x < out_w; ++x) {
      const Tap& b = tx[x];
      for (std::size_t c = 0; c < c_count; ++c) {
        const double top = src.at(a.i0, b.i0, c) * (1.0 - b.frac) +
                           src.at(a.i0, b.i1, c) * b.frac;
        const double bottom = src.at(a.i1, b.i0, c) * (1.0 - b.frac) +
                              src.at(a.i1, b.i1, c) * b.frac;
        // Convex combination stays in [0,1]; clamp absorbs rounding.
        out.at(y, x, c) =
            std::clamp(top * (1.0 - a.frac) + bottom * a.frac, 0.0, 1.0);
      }
    }
  }
  return Image(std::move(out));
}

}  // namespace linesight::imagecore
