#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "linesight/detmetrics.hpp"
#include "linesight/imagecore.hpp"
#include "linesight/nn.hpp"

// Single-shot detector at desk scale: depthwise-separable backbone, one
// anchor grid, a softmax class head (index 0 is background) and a box
// offset head.
namespace linesight::detector {

using detmetrics::BoundingBox;
using detmetrics::Detection;
using detmetrics::GroundTruth;
using imagecore::Image;
using imagecore::Tensor;

struct AnchorShape {
  double width;
  double height;
  friend bool operator==(const AnchorShape&, const AnchorShape&) = default;
};

struct AnchorGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double image_w = 0.0;
  double image_h = 0.0;
  std::vector<AnchorShape> shapes;
  // Row-major over cells, then shape index. Clipped to the image.
  std::vector<BoundingBox> boxes;

  std::size_t size() const noexcept { return boxes.size(); }
};

AnchorGrid build_anchors(double image_w, double image_h, std::size_t rows, std::size_t cols,
                         const std::vector<AnchorShape>& shapes);

// Per-anchor training targets. Label 0 is background, class c is c + 1.
struct Targets {
  std::vector<int> labels;
  Tensor offsets;  // [A,4]: dcx/aw, dcy/ah, log(gw/aw), log(gh/ah)

  std::size_t positives() const;
};

Targets encode_targets(std::span<const GroundTruth> gt, const AnchorGrid& anchors,
                       double iou_match = 0.5);

std::array<double, 4> encode_box(const BoundingBox& box, const BoundingBox& anchor);
BoundingBox decode_box(std::span<const double> offsets, const BoundingBox& anchor);

struct RawOutput {
  Tensor scores;   // [A, K+1], softmax per row
  Tensor offsets;  // [A, 4]

  std::size_t size() const noexcept { return scores.size() + offsets.size(); }
};

std::vector<Detection> decode_detections(const RawOutput& raw, const AnchorGrid& anchors,
                                         double prob_threshold, double nms_iou = 0.5);

struct DetectorConfig {
  std::size_t input_size = 32;
  int num_classes = 6;
  std::size_t stem_channels = 8;
  std::vector<std::size_t> block_channels = {16, 32, 64};
  std::vector<std::size_t> block_strides = {2, 2, 1};
  std::vector<AnchorShape> anchor_shapes = {{14.0, 14.0}, {6.0, 12.0}};
  std::vector<std::string> class_names;
};

struct DetectorModel {
  DetectorConfig config;
  AnchorGrid anchors;
  nn::Network backbone;
  nn::Network class_head;
  nn::Network box_head;

  std::size_t num_anchor_shapes() const { return config.anchor_shapes.size(); }
  std::size_t num_outputs() const { return static_cast<std::size_t>(config.num_classes) + 1; }
};

// Random Glorot weights.
DetectorModel build_detector(const DetectorConfig& config, std::uint64_t seed);

// Forward pass intermediates needed for backpropagation.
struct ForwardTrace {
  nn::Network::Trace backbone;
  nn::Network::Trace class_head;
  nn::Network::Trace box_head;
  Tensor logits;  // [A, K+1]
};

// Image must be input_size square with 3 channels.
RawOutput detector_forward(const DetectorModel& model, const Image& image);
RawOutput detector_forward(const DetectorModel& model, const Image& image, ForwardTrace& trace);

std::vector<Detection> detect(const DetectorModel& model, const Image& image,
                              double prob_threshold, double nms_iou = 0.5);

struct TrainSample {
  Image image;
  std::vector<GroundTruth> gt;
};

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch = 8;
  nn::AdamConfig adam{};
  // Learning rate decays linearly to adam.lr * final_lr_fraction.
  double final_lr_fraction = 1.0;
  std::uint64_t seed = 0;
  double iou_match = 0.5;
  std::size_t negatives_per_positive = 3;
};

// Loss on one sample and gradients w.r.t. the raw head outputs.
struct SampleLoss {
  double classification = 0.0;
  double localization = 0.0;
  std::size_t positives = 0;
  Tensor grad_logits;   // [A, K+1], unnormalized
  Tensor grad_offsets;  // [A, 4]
};

SampleLoss sample_loss(const RawOutput& raw, const Tensor& logits, const Targets& targets,
                       std::size_t negatives_per_positive);

struct TrainResult {
  DetectorModel model;
  std::vector<double> loss_log;  // one entry per step
};

// Continues training from `model`.
TrainResult train_detector(DetectorModel model, std::span<const TrainSample> samples,
                           const TrainConfig& config);
TrainResult train_detector(std::span<const TrainSample> samples, const TrainConfig& config,
                           const DetectorConfig& arch = {});

// Weights at `path`, architecture/anchors/class names at `path`.json.
void save_detector(const DetectorModel& model, const std::filesystem::path& path);
DetectorModel load_detector(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace linesight::detector
