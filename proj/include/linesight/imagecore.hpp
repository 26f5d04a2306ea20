#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace linesight::imagecore {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major array of 64-bit reals.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  // Throws DimensionError if the data length does not match the shape and
  // ValidationError if any value is not finite.
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Rank-3 [H,W,C] accessors.
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }
  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;
  void fill(double value);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

double dot(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Channel-last image with values in [0,1]; 1 (grayscale) or 3 (RGB) channels.
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, std::size_t channels,
        double fill = 0.0);
  // Validates shape [H,W,C], channels in {1,3} and range [0,1].
  explicit Image(Tensor pixels);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  const Tensor& pixels() const noexcept { return pixels_; }

  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels_.at(y, x, c);
  }
  // Stores clamp(value, 0, 1).
  void set(std::size_t y, std::size_t x, std::size_t c, double value);

  // Copies the pixel rectangle [y0,y0+h) x [x0,x0+w).
  Image crop(std::size_t y0, std::size_t x0, std::size_t h,
             std::size_t w) const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  Tensor pixels_;
};

// Integer class id per pixel.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(std::size_t height, std::size_t width, int fill = 0);
  LabelMap(std::size_t height, std::size_t width, std::vector<int> labels);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::span<const int> labels() const noexcept { return labels_; }
  std::span<int> labels() noexcept { return labels_; }

  int at(std::size_t y, std::size_t x) const { return labels_[y * width_ + x]; }
  int& at(std::size_t y, std::size_t x) { return labels_[y * width_ + x]; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<int> labels_;
};

// Bilinear resampling with half-pixel centers:
//   src = (dst + 0.5) * in / out - 0.5, clamped to the valid range.
// Same-size resize is the exact identity.
Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w);

// Binary PGM (P5, 1 channel) and PPM (P6, 3 channels), maxval 255.
Image decode_pnm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pnm(const Image& img);

Image load_image(const std::filesystem::path& path);
void save_image(const Image& img, const std::filesystem::path& path);

}  // namespace linesight::imagecore
