#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "linesight/detector.hpp"
#include "linesight/errors.hpp"

using namespace linesight;
using namespace linesight::detector;

namespace {

DetectorConfig tiny_config() {
  DetectorConfig c;
  c.input_size = 16;
  c.num_classes = 2;
  c.stem_channels = 4;
  c.block_channels = {8, 8};
  c.block_strides = {2, 1};
  c.anchor_shapes = {{6.0, 6.0}};
  return c;
}

TrainSample square_sample() {
  TrainSample s{Image(16, 16, 3), {}};
  for (std::size_t y = 4; y < 10; ++y) {
    for (std::size_t x = 4; x < 10; ++x) {
      for (std::size_t k = 0; k < 3; ++k) s.image.set(y, x, k, 1.0);
    }
  }
  s.gt.push_back({1, BoundingBox(4, 4, 10, 10)});
  return s;
}

void zero_network(nn::Network& net) {
  for (auto& l : net.layers()) {
    for (double& v : l.weights.kernel.data()) v = 0.0;
    for (double& v : l.weights.bias.data()) v = 0.0;
  }
}

}  // namespace

TEST_CASE("single anchor covers the image") {
  const AnchorGrid g = build_anchors(10, 10, 1, 1, {{10, 10}});
  REQUIRE(g.size() == 1);
  CHECK(g.boxes[0] == BoundingBox(0, 0, 10, 10));
}

TEST_CASE("anchor count and order") {
  const AnchorGrid g = build_anchors(20, 20, 2, 2, {{4, 4}, {2, 6}});
  REQUIRE(g.size() == 8);
  CHECK(g.boxes[0] == BoundingBox(3, 3, 7, 7));
  CHECK(g.boxes[1] == BoundingBox(4, 2, 6, 8));
  CHECK(g.boxes[2] == BoundingBox(13, 3, 17, 7));
  CHECK(g.boxes[7] == BoundingBox(14, 12, 16, 18));
}

TEST_CASE("anchors are clipped to the image") {
  const AnchorGrid g = build_anchors(10, 10, 2, 2, {{8, 8}});
  CHECK(g.boxes[0] == BoundingBox(0, 0, 6.5, 6.5));
  CHECK(g.boxes[3] == BoundingBox(3.5, 3.5, 10, 10));
}

TEST_CASE("anchor arguments are validated") {
  CHECK_THROWS_AS(build_anchors(10, 10, 0, 1, {{1, 1}}), ValidationError);
  CHECK_THROWS_AS(build_anchors(10, 10, 1, 1, {}), ValidationError);
  CHECK_THROWS_AS(build_anchors(0, 10, 1, 1, {{1, 1}}), ValidationError);
  CHECK_THROWS_AS(build_anchors(10, 10, 1, 1, {{0, 1}}), ValidationError);
}

TEST_CASE("box encoding roundtrips") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> pos(0.0, 20.0), size(0.5, 12.0);
  for (int trial = 0; trial < 200; ++trial) {
    const double ax = pos(rng), ay = pos(rng), bx = pos(rng), by = pos(rng);
    const BoundingBox anchor(ax, ay, ax + size(rng), ay + size(rng));
    const BoundingBox box(bx, by, bx + size(rng), by + size(rng));
    const auto o = encode_box(box, anchor);
    const BoundingBox back = decode_box(o, anchor);
    CHECK(back.x_min() == doctest::Approx(box.x_min()).epsilon(1e-6));
    CHECK(back.y_min() == doctest::Approx(box.y_min()).epsilon(1e-6));
    CHECK(back.x_max() == doctest::Approx(box.x_max()).epsilon(1e-6));
    CHECK(back.y_max() == doctest::Approx(box.y_max()).epsilon(1e-6));
  }
}

TEST_CASE("ground truth equal to an anchor encodes to zero offsets") {
  const AnchorGrid g = build_anchors(20, 20, 2, 2, {{4, 4}});
  const std::vector<GroundTruth> gt = {{3, g.boxes[2]}};
  const Targets t = encode_targets(gt, g);
  CHECK(t.positives() == 1);
  CHECK(t.labels[2] == 4);
  for (std::size_t k = 0; k < 4; ++k) CHECK(t.offsets[2 * 4 + k] == doctest::Approx(0.0));
}

TEST_CASE("no ground truth gives all background") {
  const AnchorGrid g = build_anchors(20, 20, 3, 3, {{4, 4}, {6, 2}});
  const Targets t = encode_targets({}, g);
  CHECK(t.positives() == 0);
  CHECK(t.labels.size() == g.size());
}

TEST_CASE("matching threshold and best-anchor fallback") {
  const AnchorGrid g = build_anchors(20, 20, 1, 2, {{10, 10}});
  // Anchors are (0,5,10,15) and (10,5,20,15).
  const std::vector<GroundTruth> gt = {{0, BoundingBox(0, 5, 10, 11)}};  // IoU 0.6 with anchor 0
  CHECK(encode_targets(gt, g, 0.5).positives() == 1);
  const Targets strict = encode_targets(gt, g, 0.7);
  CHECK(strict.positives() == 1);
  CHECK(strict.labels[0] == 1);
  CHECK(strict.labels[1] == 0);
}

TEST_CASE("zero weights give uniform class probabilities") {
  DetectorModel m = build_detector(tiny_config(), 1);
  zero_network(m.class_head);
  zero_network(m.box_head);
  const RawOutput raw = detector_forward(m, square_sample().image);
  const std::size_t k = m.num_outputs();
  CHECK(raw.scores.dim(0) == m.anchors.size());
  CHECK(raw.size() == m.anchors.size() * (k + 4));
  for (double p : raw.scores.data()) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // Six-class default: 1/7 per class, A*(K+5) outputs.
  DetectorModel d = build_detector(DetectorConfig{}, 2);
  zero_network(d.class_head);
  const RawOutput rd = detector_forward(d, Image(32, 32, 3));
  CHECK(rd.size() == d.anchors.size() * (6 + 5));
  for (double p : rd.scores.data()) CHECK(p == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("threshold above one yields no detections") {
  const DetectorModel m = build_detector(tiny_config(), 3);
  CHECK(detect(m, square_sample().image, 1.01).empty());
}

TEST_CASE("decode applies threshold and suppression") {
  const AnchorGrid g = build_anchors(20, 20, 1, 2, {{10, 10}});
  RawOutput raw{imagecore::Tensor({2, 3}), imagecore::Tensor({2, 4})};
  // Anchor 0: class 0 at 0.9; anchor 1: background wins.
  raw.scores[0] = 0.05; raw.scores[1] = 0.9; raw.scores[2] = 0.05;
  raw.scores[3] = 0.6;  raw.scores[4] = 0.3; raw.scores[5] = 0.1;
  auto dets = decode_detections(raw, g, 0.5);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].class_id == 0);
  CHECK(dets[0].probability == doctest::Approx(0.9));
  CHECK(dets[0].box == g.boxes[0]);
  CHECK(decode_detections(raw, g, 0.95).empty());
  // Shift anchor 1 onto anchor 0: overlapping same-class boxes collapse.
  raw.scores[3] = 0.1; raw.scores[4] = 0.8;
  raw.offsets[4] = -1.0;
  dets = decode_detections(raw, g, 0.5);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].probability == doctest::Approx(0.9));
  CHECK(decode_detections(raw, g, 0.5, 1.0).size() == 2);
  CHECK_THROWS_AS(decode_detections(RawOutput{imagecore::Tensor({3, 3}), imagecore::Tensor({3, 4})}, g, 0.5),
                  DimensionError);
}

TEST_CASE("sample loss gradient matches finite differences of the logits") {
  const DetectorModel m = build_detector(tiny_config(), 4);
  const TrainSample s = square_sample();
  ForwardTrace trace;
  const RawOutput raw = detector_forward(m, s.image, trace);
  const Targets t = encode_targets(s.gt, m.anchors);
  const SampleLoss base = sample_loss(raw, trace.logits, t, 1000);
  auto loss_at = [&](const imagecore::Tensor& logits) {
    RawOutput r{nn::softmax_rows(logits), raw.offsets};
    return sample_loss(r, logits, t, 1000).classification;
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < trace.logits.size(); i += 7) {
    imagecore::Tensor up = trace.logits, down = trace.logits;
    up[i] += h;
    down[i] -= h;
    CHECK(base.grad_logits[i] == doctest::Approx((loss_at(up) - loss_at(down)) / (2 * h)).epsilon(1e-4));
  }
}

TEST_CASE("training lowers the loss on a single sample and is deterministic") {
  const std::vector<TrainSample> samples = {square_sample()};
  TrainConfig tc;
  tc.steps = 200;
  tc.batch = 1;
  tc.adam.lr = 0.01;
  tc.seed = 5;
  const TrainResult r = train_detector(samples, tc, tiny_config());
  REQUIRE(r.loss_log.size() == 200);
  CHECK(r.loss_log.back() < 0.5 * r.loss_log.front());
  const auto dets = detect(r.model, samples[0].image, 0.5);
  REQUIRE(!dets.empty());
  CHECK(dets[0].class_id == 1);
  CHECK(detmetrics::iou(dets[0].box, samples[0].gt[0].box) > 0.5);
  const TrainResult again = train_detector(samples, tc, tiny_config());
  CHECK(again.loss_log == r.loss_log);
}

TEST_CASE("training arguments are validated") {
  const std::vector<TrainSample> samples = {square_sample()};
  TrainConfig tc;
  tc.steps = 0;
  CHECK_THROWS_AS(train_detector(samples, tc, tiny_config()), ValidationError);
  tc.steps = 1;
  tc.batch = 0;
  CHECK_THROWS_AS(train_detector(samples, tc, tiny_config()), ValidationError);
  tc.batch = 1;
  tc.final_lr_fraction = 0.0;
  CHECK_THROWS_AS(train_detector(samples, tc, tiny_config()), ValidationError);
  tc.final_lr_fraction = 1.0;
  CHECK_THROWS_AS(train_detector({}, tc, tiny_config()), ValidationError);
}

TEST_CASE("save and load reproduce the outputs") {
  const DetectorModel m = build_detector(tiny_config(), 6);
  const auto dir = std::filesystem::temp_directory_path() / "linesight_test_detector";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.lscw";
  save_detector(m, path);
  CHECK(std::filesystem::exists(sidecar_path(path)));
  const DetectorModel back = load_detector(path);
  const Image img = square_sample().image;
  const RawOutput a = detector_forward(m, img), b = detector_forward(back, img);
  CHECK(a.scores.data().size() == b.scores.data().size());
  for (std::size_t i = 0; i < a.scores.size(); ++i) CHECK(a.scores[i] == b.scores[i]);
  for (std::size_t i = 0; i < a.offsets.size(); ++i) CHECK(a.offsets[i] == b.offsets[i]);
  CHECK(back.config.class_names == m.config.class_names);
  CHECK_THROWS_AS(load_detector(dir / "missing.lscw"), IoError);
  std::filesystem::remove_all(dir);
}
