#include "linesight/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "linesight/errors.hpp"
#include "linesight/nn_json.hpp"

namespace linesight::detector {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kMaxLogScale = 6.0;

std::size_t feature_size(const DetectorConfig& c) {
  std::size_t s = c.input_size;
  for (std::size_t stride : c.block_strides) s = (s + stride - 1) / stride;
  return s;
}

void validate_config(const DetectorConfig& c) {
  if (c.num_classes < 1) throw ConfigError("detector needs at least one class");
  if (c.anchor_shapes.empty()) throw ConfigError("detector needs at least one anchor shape");
  if (c.block_channels.empty()) throw ConfigError("detector needs at least one block");
  if (c.block_strides.size() != c.block_channels.size()) {
    throw ConfigError("block_strides must match block_channels");
  }
  for (std::size_t s : c.block_strides) {
    if (s != 1 && s != 2) throw ConfigError("block strides must be 1 or 2");
  }
  if (c.input_size < 8) throw ConfigError("detector input must be at least 8 px");
  if (!c.class_names.empty() && c.class_names.size() != static_cast<std::size_t>(c.num_classes)) {
    throw ConfigError("class_names must list num_classes names");
  }
}

Tensor normalize_input(const Image& image, std::size_t size) {
  if (image.height() != size || image.width() != size || image.channels() != 3) {
    throw DimensionError("detector expects a [" + std::to_string(size) + "," +
                         std::to_string(size) + ",3] image, got " +
                         imagecore::shape_to_string(image.pixels().shape()));
  }
  Tensor x = image.pixels();
  for (double& v : x.data()) v = 2.0 * v - 1.0;
  return x;
}

// log(sum exp(row)) for row a of a [A,K] tensor.
double log_sum_exp(const Tensor& logits, std::size_t a, std::size_t k) {
  double m = logits[a * k];
  for (std::size_t j = 1; j < k; ++j) m = std::max(m, logits[a * k + j]);
  double s = 0.0;
  for (std::size_t j = 0; j < k; ++j) s += std::exp(logits[a * k + j] - m);
  return m + std::log(s);
}

json anchors_to_json(const AnchorGrid& g) {
  json shapes = json::array();
  for (const auto& s : g.shapes) shapes.push_back({s.width, s.height});
  return {{"rows", g.rows}, {"cols", g.cols}, {"image_w", g.image_w}, {"image_h", g.image_h},
          {"shapes", shapes}};
}

}  // namespace

AnchorGrid build_anchors(double image_w, double image_h, std::size_t rows, std::size_t cols,
                         const std::vector<AnchorShape>& shapes) {
  if (rows < 1 || cols < 1) throw ValidationError("anchor grid needs rows, cols >= 1");
  if (shapes.empty()) throw ValidationError("anchor grid needs at least one shape");
  if (!(image_w > 0.0) || !(image_h > 0.0)) throw ValidationError("image size must be positive");
  for (const auto& s : shapes) {
    if (!(s.width > 0.0) || !(s.height > 0.0)) {
      throw ValidationError("anchor shapes must have positive size");
    }
  }
  AnchorGrid g;
  g.rows = rows;
  g.cols = cols;
  g.image_w = image_w;
  g.image_h = image_h;
  g.shapes = shapes;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double cx = (c + 0.5) * image_w / cols;
      const double cy = (r + 0.5) * image_h / rows;
      for (const auto& s : shapes) {
        const BoundingBox raw(cx - 0.5 * s.width, cy - 0.5 * s.height, cx + 0.5 * s.width,
                              cy + 0.5 * s.height);
        g.boxes.push_back(*detmetrics::clip_box(raw, image_w, image_h));
      }
    }
  }
  return g;
}

std::size_t Targets::positives() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(),
                                                [](int l) { return l > 0; }));
}

std::array<double, 4> encode_box(const BoundingBox& box, const BoundingBox& anchor) {
  return {(box.center_x() - anchor.center_x()) / anchor.width(),
          (box.center_y() - anchor.center_y()) / anchor.height(),
          std::log(box.width() / anchor.width()), std::log(box.height() / anchor.height())};
}

BoundingBox decode_box(std::span<const double> o, const BoundingBox& anchor) {
  const double cx = anchor.center_x() + o[0] * anchor.width();
  const double cy = anchor.center_y() + o[1] * anchor.height();
  const double w = anchor.width() * std::exp(std::clamp(o[2], -kMaxLogScale, kMaxLogScale));
  const double h = anchor.height() * std::exp(std::clamp(o[3], -kMaxLogScale, kMaxLogScale));
  return BoundingBox(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h);
}

Targets encode_targets(std::span<const GroundTruth> gt, const AnchorGrid& anchors,
                       double iou_match) {
  const std::size_t n = anchors.size();
  Targets t;
  t.labels.assign(n, 0);
  t.offsets = Tensor({n, 4});
  std::vector<int> owner(n, -1);
  std::vector<double> best_iou(n, 0.0);
  for (std::size_t g = 0; g < gt.size(); ++g) {
    for (std::size_t a = 0; a < n; ++a) {
      const double v = detmetrics::iou(gt[g].box, anchors.boxes[a]);
      if (v >= iou_match && v > best_iou[a]) {
        best_iou[a] = v;
        owner[a] = static_cast<int>(g);
      }
    }
  }
  // Every gt keeps at least its best anchor.
  for (std::size_t g = 0; g < gt.size(); ++g) {
    std::size_t best = 0;
    double bv = -1.0;
    for (std::size_t a = 0; a < n; ++a) {
      const double v = detmetrics::iou(gt[g].box, anchors.boxes[a]);
      if (v > bv) {
        bv = v;
        best = a;
      }
    }
    owner[best] = static_cast<int>(g);
  }
  for (std::size_t a = 0; a < n; ++a) {
    if (owner[a] < 0) continue;
    const GroundTruth& g = gt[static_cast<std::size_t>(owner[a])];
    t.labels[a] = g.class_id + 1;
    const auto o = encode_box(g.box, anchors.boxes[a]);
    for (std::size_t k = 0; k < 4; ++k) t.offsets[a * 4 + k] = o[k];
  }
  return t;
}

std::vector<Detection> decode_detections(const RawOutput& raw, const AnchorGrid& anchors,
                                         double prob_threshold, double nms_iou) {
  if (!(prob_threshold >= 0.0)) throw ValidationError("prob_threshold must be >= 0");
  const std::size_t n = anchors.size();
  if (raw.scores.rank() != 2 || raw.scores.dim(0) != n ||
      raw.offsets.shape() != imagecore::Shape{n, 4}) {
    throw DimensionError("raw output " + imagecore::shape_to_string(raw.scores.shape()) +
                         " does not match " + std::to_string(n) + " anchors");
  }
  const std::size_t k = raw.scores.dim(1);
  std::vector<Detection> dets;
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (raw.scores[a * k + j] > raw.scores[a * k + best]) best = j;
    }
    if (best == 0) continue;
    const double p = raw.scores[a * k + best];
    if (p < prob_threshold) continue;
    const BoundingBox box = decode_box(raw.offsets.data().subspan(a * 4, 4), anchors.boxes[a]);
    const auto clipped = detmetrics::clip_box(box, anchors.image_w, anchors.image_h);
    if (!clipped) continue;
    dets.emplace_back(*clipped, static_cast<int>(best) - 1, p);
  }
  return detmetrics::nms(dets, nms_iou);
}

DetectorModel build_detector(const DetectorConfig& config, std::uint64_t seed) {
  validate_config(config);
  std::mt19937_64 rng(seed);
  DetectorModel m;
  m.config = config;
  if (m.config.class_names.empty()) {
    for (int c = 0; c < config.num_classes; ++c) {
      m.config.class_names.push_back("class_" + std::to_string(c));
    }
  }
  const std::size_t grid = feature_size(config);
  m.anchors = build_anchors(static_cast<double>(config.input_size),
                            static_cast<double>(config.input_size), grid, grid,
                            config.anchor_shapes);

  using nn::Activation;
  using nn::LayerKind;
  nn::ConvSpec stem{3, config.stem_channels, 3, 3, 1, 1, 1, nn::Padding::uniform(1)};
  m.backbone.add(nn::make_layer("stem", LayerKind::Conv, stem, Activation::Relu, rng));
  std::size_t ch = config.stem_channels;
  for (std::size_t b = 0; b < config.block_channels.size(); ++b) {
    const std::string id = "block" + std::to_string(b + 1);
    m.backbone.add(nn::make_layer(id + "_dw", LayerKind::Conv,
                                  nn::depthwise_spec(ch, 3, config.block_strides[b], 1,
                                                     nn::Padding::uniform(1)),
                                  Activation::Relu, rng));
    m.backbone.add(nn::make_layer(id + "_pw", LayerKind::Conv,
                                  nn::pointwise_spec(ch, config.block_channels[b]),
                                  Activation::Relu, rng));
    ch = config.block_channels[b];
  }
  const std::size_t shapes = config.anchor_shapes.size();
  nn::ConvSpec cls{ch, shapes * (config.num_classes + 1), 3, 3, 1, 1, 1, nn::Padding::uniform(1)};
  nn::ConvSpec box{ch, shapes * 4, 3, 3, 1, 1, 1, nn::Padding::uniform(1)};
  m.class_head.add(nn::make_layer("class", LayerKind::Conv, cls, Activation::Identity, rng));
  m.box_head.add(nn::make_layer("box", LayerKind::Conv, box, Activation::Identity, rng));
  return m;
}

RawOutput detector_forward(const DetectorModel& model, const Image& image, ForwardTrace& trace) {
  const Tensor x = normalize_input(image, model.config.input_size);
  const Tensor feat = model.backbone.forward(x, trace.backbone);
  const Tensor cls = model.class_head.forward(feat, trace.class_head);
  const Tensor box = model.box_head.forward(feat, trace.box_head);
  const std::size_t n = model.anchors.size();
  const std::size_t k = model.num_outputs();
  if (cls.size() != n * k || box.size() != n * 4) {
    throw DimensionError("head output does not match the anchor grid");
  }
  trace.logits = cls.reshaped({n, k});
  return {nn::softmax_rows(trace.logits), box.reshaped({n, 4})};
}

RawOutput detector_forward(const DetectorModel& model, const Image& image) {
  ForwardTrace trace;
  return detector_forward(model, image, trace);
}

std::vector<Detection> detect(const DetectorModel& model, const Image& image,
                              double prob_threshold, double nms_iou) {
  return decode_detections(detector_forward(model, image), model.anchors, prob_threshold,
                           nms_iou);
}

SampleLoss sample_loss(const RawOutput& raw, const Tensor& logits, const Targets& targets,
                       std::size_t negatives_per_positive) {
  const std::size_t n = targets.labels.size();
  const std::size_t k = logits.dim(1);
  SampleLoss out;
  out.grad_logits = Tensor({n, k});
  out.grad_offsets = Tensor({n, 4});

  std::vector<std::size_t> negatives;
  std::vector<double> neg_loss(n, 0.0);
  auto add_ce = [&](std::size_t a, std::size_t label) {
    out.classification += log_sum_exp(logits, a, k) - logits[a * k + label];
    for (std::size_t j = 0; j < k; ++j) {
      out.grad_logits[a * k + j] += raw.scores[a * k + j] - (j == label ? 1.0 : 0.0);
    }
  };
  for (std::size_t a = 0; a < n; ++a) {
    const int label = targets.labels[a];
    if (label == 0) {
      negatives.push_back(a);
      neg_loss[a] = log_sum_exp(logits, a, k) - logits[a * k];
      continue;
    }
    ++out.positives;
    add_ce(a, static_cast<std::size_t>(label));
    for (std::size_t j = 0; j < 4; ++j) {
      const double d = raw.offsets[a * 4 + j] - targets.offsets[a * 4 + j];
      out.localization += nn::smooth_l1(d);
      out.grad_offsets[a * 4 + j] = nn::smooth_l1_grad(d);
    }
  }
  // Hardest background anchors first; ties by anchor index.
  const std::size_t keep =
      std::min(negatives.size(), negatives_per_positive * std::max<std::size_t>(out.positives, 1));
  std::stable_sort(negatives.begin(), negatives.end(),
                   [&](std::size_t a, std::size_t b) { return neg_loss[a] > neg_loss[b]; });
  for (std::size_t i = 0; i < keep; ++i) add_ce(negatives[i], 0);
  return out;
}

TrainResult train_detector(DetectorModel model, std::span<const TrainSample> samples,
                           const TrainConfig& config) {
  if (samples.empty()) throw ValidationError("training needs at least one sample");
  if (config.steps < 1) throw ValidationError("training needs steps >= 1");
  if (config.batch < 1) throw ValidationError("training needs batch >= 1");
  if (!(config.final_lr_fraction > 0.0 && config.final_lr_fraction <= 1.0)) {
    throw ValidationError("final_lr_fraction must be in (0,1]");
  }

  std::vector<Targets> targets;
  for (const auto& s : samples) targets.push_back(encode_targets(s.gt, model.anchors, config.iou_match));

  nn::NetworkOptimizer opt_backbone(model.backbone, config.adam);
  nn::NetworkOptimizer opt_class(model.class_head, config.adam);
  nn::NetworkOptimizer opt_box(model.box_head, config.adam);
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);

  const std::size_t grid_r = model.anchors.rows, grid_c = model.anchors.cols;
  TrainResult result;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const double progress = config.steps > 1 ? static_cast<double>(step) / (config.steps - 1) : 0.0;
    const double lr = config.adam.lr * (1.0 - (1.0 - config.final_lr_fraction) * progress);
    opt_backbone.set_learning_rate(lr);
    opt_class.set_learning_rate(lr);
    opt_box.set_learning_rate(lr);
    auto g_backbone = model.backbone.zero_grads();
    auto g_class = model.class_head.zero_grads();
    auto g_box = model.box_head.zero_grads();
    double loss = 0.0;
    std::size_t positives = 0;
    for (std::size_t b = 0; b < config.batch; ++b) {
      const std::size_t i = pick(rng);
      ForwardTrace trace;
      const RawOutput raw = detector_forward(model, samples[i].image, trace);
      const SampleLoss sl = sample_loss(raw, trace.logits, targets[i], config.negatives_per_positive);
      loss += sl.classification + sl.localization;
      positives += sl.positives;
      const Tensor gc = model.class_head.backward(
          trace.class_head,
          sl.grad_logits.reshaped({grid_r, grid_c, trace.logits.size() / (grid_r * grid_c)}),
          &g_class);
      const Tensor gb = model.box_head.backward(
          trace.box_head,
          sl.grad_offsets.reshaped({grid_r, grid_c, sl.grad_offsets.size() / (grid_r * grid_c)}),
          &g_box);
      Tensor gf = gc;
      for (std::size_t j = 0; j < gf.size(); ++j) gf[j] += gb[j];
      model.backbone.backward(trace.backbone, gf, &g_backbone);
    }
    const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(positives, 1));
    loss *= norm;
    if (!std::isfinite(loss)) throw DivergenceError("detector loss is not finite", step);
    result.loss_log.push_back(loss);
    opt_backbone.step(model.backbone, g_backbone, norm);
    opt_class.step(model.class_head, g_class, norm);
    opt_box.step(model.box_head, g_box, norm);
  }
  result.model = std::move(model);
  return result;
}

TrainResult train_detector(std::span<const TrainSample> samples, const TrainConfig& config,
                           const DetectorConfig& arch) {
  return train_detector(build_detector(arch, config.seed), samples, config);
}

fs::path sidecar_path(const fs::path& path) { return fs::path(path.string() + ".json"); }

void save_detector(const DetectorModel& model, const fs::path& path) {
  std::vector<nn::NamedTensor> tensors;
  nn::append_named(model.backbone, "backbone.", tensors);
  nn::append_named(model.class_head, "head.", tensors);
  nn::append_named(model.box_head, "head.", tensors);
  nn::save_weights(tensors, path);

  const DetectorConfig& c = model.config;
  json shapes = json::array();
  for (const auto& s : c.anchor_shapes) shapes.push_back({s.width, s.height});
  const json j = {{"input_size", c.input_size},
                  {"num_classes", c.num_classes},
                  {"class_names", c.class_names},
                  {"stem_channels", c.stem_channels},
                  {"block_channels", c.block_channels},
                  {"block_strides", c.block_strides},
                  {"anchor_shapes", shapes},
                  {"anchors", anchors_to_json(model.anchors)},
                  {"backbone", nn::network_to_json(model.backbone)},
                  {"class_head", nn::network_to_json(model.class_head)},
                  {"box_head", nn::network_to_json(model.box_head)}};
  std::ofstream out(sidecar_path(path));
  if (!out) throw IoError("cannot write " + sidecar_path(path).string());
  out << j.dump(2) << "\n";
}

DetectorModel load_detector(const fs::path& path) {
  std::ifstream in(sidecar_path(path));
  if (!in) throw IoError("cannot read detector sidecar " + sidecar_path(path).string());
  std::stringstream ss;
  ss << in.rdbuf();
  DetectorModel m;
  try {
    const json j = json::parse(ss.str());
    DetectorConfig& c = m.config;
    c.input_size = j.at("input_size").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<int>();
    c.class_names = j.at("class_names").get<std::vector<std::string>>();
    c.stem_channels = j.at("stem_channels").get<std::size_t>();
    c.block_channels = j.at("block_channels").get<std::vector<std::size_t>>();
    c.block_strides = j.at("block_strides").get<std::vector<std::size_t>>();
    c.anchor_shapes.clear();
    for (const auto& s : j.at("anchor_shapes")) {
      c.anchor_shapes.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
    }
    validate_config(c);
    const json& a = j.at("anchors");
    m.anchors = build_anchors(a.at("image_w").get<double>(), a.at("image_h").get<double>(),
                              a.at("rows").get<std::size_t>(), a.at("cols").get<std::size_t>(),
                              c.anchor_shapes);
    m.backbone = nn::network_from_json(j.at("backbone"));
    m.class_head = nn::network_from_json(j.at("class_head"));
    m.box_head = nn::network_from_json(j.at("box_head"));
  } catch (const json::exception& e) {
    throw ValidationError("bad detector sidecar " + sidecar_path(path).string() + ": " +
                          e.what());
  }
  const auto tensors = nn::load_weights(path);
  nn::assign_named(m.backbone, "backbone.", tensors);
  nn::assign_named(m.class_head, "head.", tensors);
  nn::assign_named(m.box_head, "head.", tensors);
  return m;
}

}  // namespace linesight::detector
