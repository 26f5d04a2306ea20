#include <algorithm>
#include <cmath>
#include <random>

#include "linesight/errors.hpp"
#include "linesight/segpatch.hpp"

namespace linesight::segpatch {

using imagecore::Tensor;

namespace {

Tensor normalize_input(const Image& img) {
  if (img.channels() != 3) throw DimensionError("segmenter input must have 3 channels");
  Tensor x = img.pixels();
  for (double& v : x.data()) v = 2.0 * v - 1.0;
  return x;
}

void validate(const SegmenterConfig& c) {
  if (c.num_classes < 2) throw ValidationError("segmenter needs at least two classes");
  if (c.stem_channels < 1 || c.atrous_channels < 1) {
    throw ValidationError("segmenter channel counts must be >= 1");
  }
  if (c.atrous_rates.empty()) throw ValidationError("segmenter needs at least one atrous rate");
  for (auto r : c.atrous_rates) {
    if (r < 1) throw ValidationError("atrous rates must be >= 1");
  }
}

}  // namespace

Segmenter build_segmenter(const SegmenterConfig& config, std::uint64_t seed) {
  validate(config);
  std::mt19937_64 rng(seed);
  Segmenter m;
  m.config = config;
  using nn::Activation;
  using nn::LayerKind;
  const nn::ConvSpec stem{3, config.stem_channels, 3, 3, 1, 1, 1, nn::Padding::same(3, 3)};
  m.net.add(nn::make_layer("stem", LayerKind::Conv, stem, Activation::Relu, rng));
  std::size_t ch = config.stem_channels;
  for (std::size_t i = 0; i < config.atrous_rates.size(); ++i) {
    const std::size_t r = config.atrous_rates[i];
    const std::string id = "atrous" + std::to_string(i + 1);
    m.net.add(nn::make_layer(id + "_dw", LayerKind::Conv,
                             nn::depthwise_spec(ch, 3, 1, r, nn::Padding::same(3, 3, r)),
                             Activation::Identity, rng));
    m.net.add(nn::make_layer(id + "_pw", LayerKind::Conv,
                             nn::pointwise_spec(ch, config.atrous_channels), Activation::Relu,
                             rng));
    ch = config.atrous_channels;
  }
  m.net.add(nn::make_layer("classify", LayerKind::Conv,
                           nn::pointwise_spec(ch, static_cast<std::size_t>(config.num_classes)),
                           Activation::Identity, rng));
  return m;
}

Tensor segmenter_probabilities(const Segmenter& model, const Image& img) {
  const Tensor logits = model.net.forward(normalize_input(img));
  const std::size_t k = logits.dim(2);
  return nn::softmax_rows(logits.reshaped({img.height() * img.width(), k}))
      .reshaped({img.height(), img.width(), k});
}

LabelMap predict_labels(const Segmenter& model, const Image& img) {
  const Tensor logits = model.net.forward(normalize_input(img));
  const std::size_t k = logits.dim(2);
  LabelMap out(img.height(), img.width());
  auto labels = out.labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    }
    labels[i] = static_cast<int>(best);
  }
  return out;
}

LabelMap segment_image(const Segmenter& model, const Image& img, std::size_t rows,
                       std::size_t cols, std::size_t infer_size) {
  const auto patches = split_patches(img, rows, cols);
  std::vector<LabelPatch> out;
  out.reserve(patches.size());
  for (const auto& p : patches) {
    const std::size_t h = p.image.height(), w = p.image.width();
    if (infer_size == 0 || (infer_size == h && infer_size == w)) {
      out.push_back({p.row, p.col, predict_labels(model, p.image)});
      continue;
    }
    const LabelMap small =
        predict_labels(model, imagecore::resize_bilinear(p.image, infer_size, infer_size));
    out.push_back({p.row, p.col, resize_nearest(small, h, w)});
  }
  return reassemble(out, rows, cols);
}

SegTrainResult train_pixel_segmenter(std::span<const SegSample> samples,
                                     const SegTrainConfig& config, const SegmenterConfig& arch) {
  if (samples.empty()) throw ValidationError("segmenter training needs at least one sample");
  if (config.steps < 1) throw ValidationError("segmenter training needs steps >= 1");
  if (config.batch < 1) throw ValidationError("segmenter training needs batch >= 1");
  for (const auto& s : samples) {
    if (s.image.height() != s.labels.height() || s.image.width() != s.labels.width()) {
      throw DimensionError("segmentation sample image and label map differ in shape");
    }
    for (int l : s.labels.labels()) {
      if (l < 0 || l >= arch.num_classes) {
        throw ValidationError("training label " + std::to_string(l) + " out of range");
      }
    }
  }
  Segmenter model = build_segmenter(arch, config.seed);
  nn::NetworkOptimizer opt(model.net, config.adam);
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  const std::size_t k = static_cast<std::size_t>(arch.num_classes);
  std::vector<double> log;
  log.reserve(config.steps);
  for (std::size_t step = 0; step < config.steps; ++step) {
    auto grads = model.net.zero_grads();
    double loss = 0.0;
    for (std::size_t b = 0; b < config.batch; ++b) {
      const SegSample& s = samples[pick(rng)];
      nn::Network::Trace trace;
      const Tensor logits = model.net.forward(normalize_input(s.image), trace);
      const std::size_t n = s.labels.labels().size();
      const Tensor p = nn::softmax_rows(logits.reshaped({n, k}));
      Tensor grad(logits.shape());
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto label = static_cast<std::size_t>(s.labels.labels()[i]);
        loss -= std::log(std::max(p[i * k + label], 1e-300)) * inv_n;
        for (std::size_t j = 0; j < k; ++j) {
          grad[i * k + j] = (p[i * k + j] - (j == label ? 1.0 : 0.0)) * inv_n;
        }
      }
      model.net.backward(trace, grad, &grads);
    }
    loss /= static_cast<double>(config.batch);
    if (!std::isfinite(loss)) throw DivergenceError("segmenter loss is not finite", step);
    log.push_back(loss);
    opt.step(model.net, grads, 1.0 / static_cast<double>(config.batch));
  }
  return {std::move(model), std::move(log)};
}

double pixel_accuracy(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw DimensionError("pixel accuracy needs equal label map shapes");
  }
  const auto p = pred.labels(), g = gt.labels();
  if (p.empty()) throw ValidationError("pixel accuracy of an empty label map");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < p.size(); ++i) hit += p[i] == g[i];
  return static_cast<double>(hit) / static_cast<double>(p.size());
}

std::vector<SegSample> color_region_dataset(std::size_t count, std::size_t size,
                                            std::span<const std::array<double, 3>> colors,
                                            double noise, std::uint64_t seed) {
  if (colors.size() < 2) throw ValidationError("color dataset needs at least two classes");
  if (size < 4) throw ValidationError("color dataset images must be at least 4 px");
  if (!(noise >= 0.0)) throw ValidationError("noise must be >= 0");
  std::mt19937_64 rng(seed);
  const double s = static_cast<double>(size);
  std::uniform_real_distribution<double> pos(0.0, s), extent(0.15 * s, 0.5 * s);
  std::uniform_real_distribution<double> jitter(-noise, noise);
  std::uniform_int_distribution<std::size_t> cls(1, colors.size() - 1);
  std::uniform_int_distribution<int> shapes(1, 4);
  std::bernoulli_distribution disc(0.5);
  std::vector<SegSample> out;
  for (std::size_t n = 0; n < count; ++n) {
    LabelMap labels(size, size, 0);
    for (int i = shapes(rng); i > 0; --i) {
      const int c = static_cast<int>(cls(rng));
      const double cx = pos(rng), cy = pos(rng), e = extent(rng);
      const bool round = disc(rng);
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
          const bool inside = round ? dx * dx + dy * dy <= 0.25 * e * e
                                    : std::abs(dx) <= 0.5 * e && std::abs(dy) <= 0.5 * e;
          if (inside) labels.at(y, x) = c;
        }
      }
    }
    Image img(size, size, 3);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const auto& rgb = colors[static_cast<std::size_t>(labels.at(y, x))];
        for (std::size_t k = 0; k < 3; ++k) img.set(y, x, k, rgb[k] + jitter(rng));
      }
    }
    out.push_back({std::move(img), std::move(labels)});
  }
  return out;
}

}  // namespace linesight::segpatch
