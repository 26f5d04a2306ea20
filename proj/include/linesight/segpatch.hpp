#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "linesight/detmetrics.hpp"
#include "linesight/imagecore.hpp"
#include "linesight/nn.hpp"

// Patch-based semantic segmentation: grid split and reassembly, palette
// encoded label maps, a small atrous per-pixel segmenter and dataset mIoU.
namespace linesight::segpatch {

using imagecore::Image;
using imagecore::LabelMap;

struct ImagePatch {
  std::size_t row = 0;
  std::size_t col = 0;
  Image image;
};

struct LabelPatch {
  std::size_t row = 0;
  std::size_t col = 0;
  LabelMap labels;
};

// Row-major grid of equal patches. DimensionError unless rows and cols
// divide the height and width.
std::vector<ImagePatch> split_patches(const Image& img, std::size_t rows = 6,
                                      std::size_t cols = 6);
std::vector<LabelPatch> split_patches(const LabelMap& labels, std::size_t rows = 6,
                                      std::size_t cols = 6);

// Places every patch at its recorded grid cell. DimensionError on a wrong
// count, mixed shapes, or a cell that is missing or duplicated.
Image reassemble(std::span<const ImagePatch> patches, std::size_t rows, std::size_t cols);
LabelMap reassemble(std::span<const LabelPatch> patches, std::size_t rows, std::size_t cols);

struct PaletteEntry {
  int id;
  std::string name;
  std::array<std::uint8_t, 3> rgb;
  friend bool operator==(const PaletteEntry&, const PaletteEntry&) = default;
};

class ClassPalette {
 public:
  // ValidationError unless ids are 0..n-1 in order and colors are unique.
  explicit ClassPalette(std::vector<PaletteEntry> entries);

  // background black, gross blue, machined yellow, hole grey, defect red.
  static ClassPalette standard();

  const std::vector<PaletteEntry>& entries() const noexcept { return entries_; }
  int num_classes() const noexcept { return static_cast<int>(entries_.size()); }
  // nullopt for a color outside the palette.
  std::optional<int> lookup(const std::array<std::uint8_t, 3>& rgb) const;

  std::string to_json() const;
  static ClassPalette from_json(const std::string& text);

  friend bool operator==(const ClassPalette&, const ClassPalette&) = default;

 private:
  std::vector<PaletteEntry> entries_;
};

ClassPalette load_palette(const std::filesystem::path& path);
void save_palette(const ClassPalette& palette, const std::filesystem::path& path);

// RGB image with each pixel set to its class color.
Image encode_labelmap(const LabelMap& labels, const ClassPalette& palette);
// Pixels are quantized to 8 bits; ValidationError names the first pixel whose
// color is not in the palette.
LabelMap decode_labelmap(const Image& img, const ClassPalette& palette);

// Nearest-neighbor with half-pixel centers.
LabelMap resize_nearest(const LabelMap& labels, std::size_t out_h, std::size_t out_w);

struct SegmenterConfig {
  int num_classes = 5;
  std::size_t stem_channels = 8;
  std::size_t atrous_channels = 8;
  std::vector<std::size_t> atrous_rates = {1, 2, 3};
};

struct Segmenter {
  SegmenterConfig config;
  nn::Network net;  // RGB [H,W,3] to logits [H,W,K]
};

Segmenter build_segmenter(const SegmenterConfig& config, std::uint64_t seed);

// Per-pixel class probabilities [H,W,K].
imagecore::Tensor segmenter_probabilities(const Segmenter& model, const Image& img);
// Per-pixel argmax; lowest id wins ties.
LabelMap predict_labels(const Segmenter& model, const Image& img);

// Split, resize each patch to infer_size (0 keeps the patch size), predict,
// resize labels back, reassemble.
LabelMap segment_image(const Segmenter& model, const Image& img, std::size_t rows,
                       std::size_t cols, std::size_t infer_size);

struct SegSample {
  Image image;
  LabelMap labels;
};

struct SegTrainConfig {
  std::size_t steps = 300;
  std::size_t batch = 2;
  nn::AdamConfig adam{0.01, 0.9, 0.999, 1e-8};
  std::uint64_t seed = 0;
};

struct SegTrainResult {
  Segmenter model;
  std::vector<double> loss_log;  // mean pixel cross-entropy per step
};

SegTrainResult train_pixel_segmenter(std::span<const SegSample> samples,
                                     const SegTrainConfig& config,
                                     const SegmenterConfig& arch = {});

double pixel_accuracy(const LabelMap& pred, const LabelMap& gt);

// Random rectangles and discs of per-class colors with uniform noise; the
// label of every pixel is the class whose color it carries.
std::vector<SegSample> color_region_dataset(std::size_t count, std::size_t size,
                                            std::span<const std::array<double, 3>> colors,
                                            double noise, std::uint64_t seed);

struct ClassIoU {
  int id;
  std::string name;
  std::size_t intersection;
  std::size_t union_count;
  std::optional<double> iou;
};

struct SegEvaluation {
  double mean_iou = 0.0;
  double pixel_accuracy = 0.0;
  std::vector<ClassIoU> classes;
};

// Global confusion counts over all pairs, then per-class IoU, then the mean
// over classes present. ValidationError on an empty dataset.
SegEvaluation evaluate_segmentation(std::span<const LabelMap> preds,
                                    std::span<const LabelMap> gts, int num_classes,
                                    const std::vector<std::string>& names = {});

// Header: class,name,intersection,union,iou; last row is the mean.
std::string evaluation_to_csv(const SegEvaluation& e);

}  // namespace linesight::segpatch
