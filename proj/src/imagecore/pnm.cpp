#include "linesight/errors.hpp"
#include "linesight/imagecore.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace linesight::imagecore {

namespace {

class HeaderReader {
 public:
  HeaderReader(std::span<const std::uint8_t> bytes, std::size_t start)
      : bytes_(bytes), pos_(start) {}

  std::size_t pos() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const auto ch = bytes_[pos_];
      if (ch == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(ch)) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  std::size_t read_uint(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > (1u << 24)) throw FormatError(std::string(what) + " too large", start);
      ++pos_;
    }
    if (pos_ == start) {
      throw FormatError(std::string("expected ") + what, start);
    }
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void expect_single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw FormatError("expected whitespace before raster", pos_);
    }
    ++pos_;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
};

}  // namespace

Image decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("unsupported image format (expected P5 or P6 magic)", 0);
  }
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  HeaderReader reader(bytes, 2);
  const std::size_t width = reader.read_uint("width");
  const std::size_t height = reader.read_uint("height");
  reader.skip_space_and_comments();
  const std::size_t maxval_offset = reader.pos();
  const std::size_t maxval = reader.read_uint("maxval");
  if (width == 0 || height == 0) {
    throw FormatError("zero image dimension", 2);
  }
  if (maxval != 255) {
    throw FormatError("only maxval 255 is supported, got " + std::to_string(maxval),
                      maxval_offset);
  }
  reader.expect_single_space();
  const std::size_t raster = reader.pos();
  const std::size_t needed = width * height * channels;
  if (bytes.size() < raster + needed) {
    throw FormatError("truncated raster: need " + std::to_string(needed) +
                          " bytes, have " + std::to_string(bytes.size() - raster),
                      bytes.size());
  }
  Tensor pixels({height, width, channels});
  auto out = pixels.data();
  for (std::size_t i = 0; i < needed; ++i) {
    out[i] = static_cast<double>(bytes[raster + i]) / 255.0;
  }
  return Image(std::move(pixels));
}

std::vector<std::uint8_t> encode_pnm(const Image& img) {
  const std::string header = std::string(img.channels() == 3 ? "P6" : "P5") +
                             "\n" + std::to_string(img.width()) + " " +
                             std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + img.pixels().size());
  for (double v : img.pixels().data()) {
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  return out;
}

Image load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_pnm(bytes);
}

void save_image(const Image& img, const std::filesystem::path& path) {
  const auto bytes = encode_pnm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace linesight::imagecore
