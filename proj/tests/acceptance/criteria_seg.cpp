#include <array>
#include <cstdio>
#include <random>
#include <set>

#include "acceptance.hpp"
#include "linesight/segpatch.hpp"

namespace linesight::acceptance {

using imagecore::Image;
using imagecore::LabelMap;
using namespace segpatch;

namespace {

// Per-class IoU from direct pixel counting, averaged over classes that occur
// in either the predictions or the ground truth.
double miou_oracle(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts, int k) {
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      for (std::size_t p = 0; p < preds[i].labels().size(); ++p) {
        const bool a = preds[i].labels()[p] == c, b = gts[i].labels()[p] == c;
        inter += a && b;
        uni += a || b;
      }
    }
    if (uni == 0) continue;
    sum += static_cast<double>(inter) / static_cast<double>(uni);
    ++present;
  }
  return sum / present;
}

}  // namespace

Outcome segmentation_harness() {
  std::mt19937_64 rng(31);

  // Full-resolution frame, single channel to bound memory.
  constexpr std::size_t kH = 3096, kW = 4128;
  bool split_ok = true;
  {
    imagecore::Tensor px({kH, kW, 1});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : px.data()) v = u(rng);
    const Image big(std::move(px));
    const auto patches = split_patches(big, 6, 6);
    split_ok = patches.size() == 36;
    std::set<std::pair<std::size_t, std::size_t>> cells;
    for (const auto& p : patches) {
      split_ok = split_ok && p.image.height() == 516 && p.image.width() == 688;
      cells.insert({p.row, p.col});
    }
    split_ok = split_ok && cells.size() == 36 && reassemble(patches, 6, 6) == big;
  }
  {
    std::vector<int> labels(kH * kW);
    std::uniform_int_distribution<int> c(0, 4);
    for (int& l : labels) l = c(rng);
    const LabelMap lm(kH, kW, std::move(labels));
    const auto patches = split_patches(lm, 6, 6);
    split_ok = split_ok && patches.size() == 36 && reassemble(patches, 6, 6) == lm;
  }

  // Palette bijection on every class and back.
  const ClassPalette palette = ClassPalette::standard();
  bool palette_ok = true;
  {
    std::set<std::array<std::uint8_t, 3>> colors;
    for (const auto& e : palette.entries()) {
      colors.insert({e.rgb[0], e.rgb[1], e.rgb[2]});
      palette_ok = palette_ok && palette.lookup({e.rgb[0], e.rgb[1], e.rgb[2]}) == e.id;
    }
    palette_ok = palette_ok && colors.size() == palette.entries().size();
    std::vector<int> labels(40 * 30);
    std::uniform_int_distribution<int> c(0, palette.num_classes() - 1);
    for (int& l : labels) l = c(rng);
    const LabelMap lm(30, 40, labels);
    palette_ok = palette_ok && decode_labelmap(encode_labelmap(lm, palette), palette) == lm;
  }

  // Library mIoU against the pixel oracle on random fixtures.
  double miou_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> n(1, 4), side(3, 12), cls(0, 4);
    std::vector<LabelMap> preds, gts;
    const int count = n(rng);
    for (int i = 0; i < count; ++i) {
      const std::size_t h = side(rng), w = side(rng);
      std::vector<int> a(h * w), b(h * w);
      for (std::size_t p = 0; p < a.size(); ++p) {
        b[p] = cls(rng);
        a[p] = p % 3 == 0 ? cls(rng) : b[p];
      }
      preds.emplace_back(h, w, a);
      gts.emplace_back(h, w, b);
    }
    miou_err = std::max(miou_err, std::abs(evaluate_segmentation(preds, gts, 5).mean_iou -
                                           miou_oracle(preds, gts, 5)));
  }

  // Toy segmenter on held-out color-region images through the patch path.
  std::vector<std::array<double, 3>> colors;
  for (const auto& e : palette.entries()) {
    colors.push_back({e.rgb[0] / 255.0, e.rgb[1] / 255.0, e.rgb[2] / 255.0});
  }
  auto train = color_region_dataset(24, 16, colors, 0.03, 41);
  for (std::size_t c = 0; c < colors.size(); ++c) {
    Image flat(16, 16, 3);
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x)
        for (std::size_t k = 0; k < 3; ++k) flat.set(y, x, k, colors[c][k]);
    train.push_back({flat, LabelMap(16, 16, static_cast<int>(c))});
  }
  SegTrainConfig tc;
  tc.steps = 300;
  SegmenterConfig arch;
  arch.num_classes = palette.num_classes();
  const Segmenter model = train_pixel_segmenter(train, tc, arch).model;
  const auto held_out = color_region_dataset(12, 36, colors, 0.03, 4242);
  std::vector<LabelMap> preds, gts;
  for (const auto& s : held_out) {
    preds.push_back(segment_image(model, s.image, 2, 2, 0));
    gts.push_back(s.labels);
  }
  const SegEvaluation eval = evaluate_segmentation(preds, gts, palette.num_classes());

  const bool ok = split_ok && palette_ok && miou_err <= 1e-12 && eval.pixel_accuracy > 0.95;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "%zux%zu frame 6x6 split/reassemble %s; palette roundtrip %s; mIoU vs oracle "
                "%.1e; toy segmenter held-out pixel accuracy %.4f (mIoU %.4f)",
                kW, kH, split_ok ? "exact" : "MISMATCH", palette_ok ? "exact" : "MISMATCH",
                miou_err, eval.pixel_accuracy, eval.mean_iou);
  return {ok, buf};
}

}  // namespace linesight::acceptance
