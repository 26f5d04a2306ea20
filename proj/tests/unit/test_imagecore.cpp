#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "linesight/errors.hpp"
#include "linesight/imagecore.hpp"

using namespace linesight;
using namespace linesight::imagecore;

namespace {

Image random_image(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t({h, w, c});
  for (double& v : t.data()) v = u(rng);
  return Image(std::move(t));
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("linesight_test_" + name);
}

}  // namespace

TEST_CASE("tensor construction validates shape and finiteness") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor({1}, std::vector<double>{NAN}), ValidationError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(t.reshaped({4}), DimensionError);
}

TEST_CASE("image rejects bad channel counts and out-of-range pixels") {
  CHECK_THROWS_AS(Image(2, 2, 2), ValidationError);
  CHECK_THROWS_AS(Image(Tensor({1, 1, 1}, std::vector<double>{1.5})), ValidationError);
  CHECK_THROWS_AS(Image(Tensor({2, 2}, 0.0)), DimensionError);
}

TEST_CASE("resize to the same size is the identity") {
  const Image img = random_image(20, 20, 3, 1);
  CHECK(resize_bilinear(img, 20, 20) == img);
  const Image big = random_image(200, 200, 3, 11);
  CHECK(resize_bilinear(big, 200, 200) == big);
}

TEST_CASE("resize of a constant image is constant") {
  const Image img(4, 4, 3, 0.5);
  const Image out = resize_bilinear(img, 2, 2);
  REQUIRE(out.height() == 2);
  for (double v : out.pixels().data()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("resize output shape and range") {
  // Stand-in for a 2748x2748 capture; the shape logic is size independent.
  const Image img = random_image(275, 275, 3, 2);
  const Image out = resize_bilinear(img, 200, 200);
  CHECK(out.height() == 200);
  CHECK(out.width() == 200);
  CHECK(out.channels() == 3);
  for (double v : out.pixels().data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS_AS(resize_bilinear(img, 0, 5), DimensionError);
}

TEST_CASE("resize matches a half-pixel-center reference on a 2x upsample") {
  // 1-D ramp 0, 1/3, 2/3, 1 upsampled to 8 samples. Sample d maps to
  // src = (d + 0.5) / 2 - 0.5, clamped to [0, 3].
  Tensor t({1, 4, 1}, std::vector<double>{0.0, 1.0 / 3, 2.0 / 3, 1.0});
  const Image out = resize_bilinear(Image(t), 1, 8);
  for (std::size_t d = 0; d < 8; ++d) {
    const double src = std::clamp((d + 0.5) / 2.0 - 0.5, 0.0, 3.0);
    CHECK(out.at(0, d, 0) == doctest::Approx(src / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("pnm roundtrip stays within 8-bit quantization") {
  const Image img = random_image(16, 16, 3, 3);
  const auto path = temp_path("roundtrip.ppm");
  save_image(img, path);
  const Image back = load_image(path);
  CHECK(max_abs_diff(img.pixels(), back.pixels()) <= 1.0 / 255.0);
  std::filesystem::remove(path);

  const Image gray = random_image(5, 7, 1, 4);
  const Image gray_back = decode_pnm(encode_pnm(gray));
  CHECK(gray_back.channels() == 1);
  CHECK(max_abs_diff(gray.pixels(), gray_back.pixels()) <= 1.0 / 255.0);
}

TEST_CASE("pnm decodes a white pixel and header comments") {
  const std::string text = "P6\n# a comment\n1 1\n255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.insert(bytes.end(), {255, 255, 255});
  const Image img = decode_pnm(bytes);
  CHECK(img.at(0, 0, 0) == 1.0);
  CHECK(img.at(0, 0, 1) == 1.0);
  CHECK(img.at(0, 0, 2) == 1.0);
}

TEST_CASE("pnm errors carry byte offsets") {
  const std::string wrong = "P3\n1 1\n255\n";
  std::vector<std::uint8_t> bytes(wrong.begin(), wrong.end());
  try {
    decode_pnm(bytes);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }

  const std::string header = "P6\n2 2\n255\n";
  std::vector<std::uint8_t> truncated(header.begin(), header.end());
  truncated.insert(truncated.end(), 5, 0);
  try {
    decode_pnm(truncated);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == truncated.size());
  }

  const std::string maxval = "P5\n1 1\n65535\n";
  std::vector<std::uint8_t> deep(maxval.begin(), maxval.end());
  deep.insert(deep.end(), 2, 0);
  try {
    decode_pnm(deep);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 7);
  }
  CHECK_THROWS_AS(load_image(temp_path("does_not_exist.ppm")), IoError);
}

TEST_CASE("crop copies the requested rectangle") {
  const Image img = random_image(6, 8, 3, 5);
  const Image c = img.crop(1, 2, 3, 4);
  CHECK(c.height() == 3);
  CHECK(c.width() == 4);
  CHECK(c.at(2, 3, 1) == img.at(3, 5, 1));
  CHECK_THROWS_AS(img.crop(4, 0, 3, 1), DimensionError);
}
