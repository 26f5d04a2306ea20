#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <random>

#include "acceptance.hpp"
#include "linesight/detector.hpp"
#include "linesight/errors.hpp"
#include "linesight/kit_classes.hpp"
#include "linesight/pipeline.hpp"
#include "linesight/synthline.hpp"

namespace linesight::acceptance {

namespace {

using detmetrics::Detection;
using imagecore::Image;
using kit::PartKind;
using clock_type = std::chrono::steady_clock;

constexpr std::size_t kFrame = 32;
constexpr std::size_t kCrop = 32;
constexpr double kThreshold = 0.9;
constexpr double kLambda = 0.1;

double since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::optional<Detection> best_of(const std::vector<Detection>& dets, int class_id) {
  std::optional<Detection> best;
  for (const Detection& d : dets) {
    if (d.class_id == class_id && (!best || d.probability > best->probability)) best = d;
  }
  return best;
}

const detmetrics::GroundTruth& gt_of(const synthline::RenderedScene& r, int class_id) {
  for (const auto& g : r.ground_truth) {
    if (g.class_id == class_id) return g;
  }
  throw StateError("kit scene lost a part");
}

synthline::KitLayout defect_kit(int type, std::mt19937_64& rng) {
  synthline::KitLayout kit = synthline::default_kit(type, type);
  synthline::DefectSpec d;
  d.kind = synthline::DefectKind::Blob;
  d.size = 3.0;
  d.intensity_delta = -0.5;
  const double angle = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  const double r = kit.disc.outer_radius - d.size;
  d.dx = r * std::cos(angle);
  d.dy = r * std::sin(angle);
  kit.disc_defects.push_back(d);
  return kit;
}

// Share of the kit crop covered by the defect, measured on a still scene.
double defect_fraction(const synthline::KitLayout& kit, std::uint64_t seed) {
  const synthline::Scene scene = synthline::random_kit_scene(kit, kFrame, seed);
  const synthline::RenderedScene r = synthline::render_scene(scene);
  const imagecore::LabelMap mask = synthline::defect_mask(scene);
  const auto rect = synthline::kit_crop_rect(
      gt_of(r, kit.calliper.class_id()).box, gt_of(r, kit.disc.class_id()).box, kFrame, kFrame);
  std::size_t hit = 0;
  for (std::size_t y = rect.y0; y < rect.y0 + rect.height; ++y)
    for (std::size_t x = rect.x0; x < rect.x0 + rect.width; ++x) hit += mask.at(y, x) != 0;
  return static_cast<double>(hit) / static_cast<double>(rect.width * rect.height);
}

synthline::RenderedVideo conveyor_pass(const synthline::KitLayout& kit, std::mt19937_64& rng) {
  synthline::VideoScript script;
  script.frame_count = 60;
  script.x_start = std::uniform_real_distribution<double>(-24.0, -20.0)(rng);
  script.y_center = 16.0 + std::uniform_real_distribution<double>(-synthline::kKitRowJitter,
                                                                   synthline::kKitRowJitter)(rng);
  script.frame_size = kFrame;
  script.noise_seed = rng();
  return synthline::render_video(kit, script);
}

}  // namespace

Outcome desk_study() {
  const auto t_start = clock_type::now();
  std::string detail;

  // Part detector on rendered single-part images.
  synthline::DatasetConfig data;
  data.train_per_class = 200;
  data.test_per_class = 20;
  data.image_size = kFrame;
  std::vector<detector::TrainSample> train;
  for (auto& s : synthline::generate_detection_samples(data, 2024, false)) {
    train.push_back({std::move(s.image), std::move(s.gt)});
  }
  detector::TrainConfig tc;
  tc.steps = 4000;
  tc.batch = 8;
  tc.adam.lr = 0.002;
  tc.seed = 1;
  detector::DetectorConfig arch;
  arch.class_names = kit::class_names();
  arch.input_size = kFrame;
  const detector::DetectorModel det = detector::train_detector(train, tc, arch).model;

  detmetrics::MatchReport report;
  for (int c = 0; c < kit::kNumClasses; ++c) report.touch(c);
  for (const auto& s : synthline::generate_detection_samples(data, 2024, true)) {
    report += detmetrics::match_detections(detector::detect(det, s.image, kThreshold), s.gt, 0.5);
  }
  detmetrics::ClassCounts total;
  std::string per_class;
  for (const auto& [c, counts] : report.all()) {
    total += counts;
    per_class += fmt(" %s %.2f/%.2f", kit::class_name(c).c_str(),
                     detmetrics::precision(counts).value_or(0.0),
                     detmetrics::recall(counts).value_or(0.0));
  }
  const double p = detmetrics::precision(total).value_or(0.0);
  const double r = detmetrics::recall(total).value_or(0.0);
  const bool detector_ok = p >= 0.95 && r >= 0.60;
  detail += fmt("detector P %.3f R %.3f (P/R per class:%s) in %.0f s", p, r, per_class.c_str(),
                since(t_start));

  // One GAN specialist per kit type, calibrated on crops chained from
  // detector boxes.
  pipeline::PipelineConfig config;
  config.prob_threshold = 0.95;
  config.patience = 100;
  config.lambda = kLambda;
  config.crop_size = kCrop;
  config.inversion.iterations = 100;
  pipeline::PipelineModels models;
  models.detector = det;
  std::size_t skipped_calibration = 0;
  for (int type = 1; type <= kit::kNumTypes; ++type) {
    const auto normals = synthline::generate_kit_crops(type, 200, kCrop, 1.0, 100 + type, kFrame);
    anomaly::GanConfig garch;
    garch.image_size = kCrop;
    garch.generator_channels = {32, 16, 8};
    garch.discriminator_channels = {16, 32, 64};
    anomaly::GanTrainConfig gtc;
    gtc.steps = 600;
    gtc.batch = 16;
    gtc.d_adam = {5e-5, 0.5, 0.999, 1e-8};
    gtc.g_adam = {2e-4, 0.5, 0.999, 1e-8};
    gtc.generator_ema = 0.98;
    gtc.seed = 10 + type;
    anomaly::GanModel gan = anomaly::train_gan(normals, gtc, garch).model;

    const synthline::KitLayout kit = synthline::default_kit(type, type);
    std::vector<Image> calib;
    for (std::uint64_t i = 0; calib.size() < 60 && i < 120; ++i) {
      const auto scene =
          synthline::render_scene(synthline::random_kit_scene(kit, kFrame, 5000 + 100 * type + i));
      const auto dets = detector::detect(det, scene.image, config.prob_threshold, config.nms_iou);
      const auto cal = best_of(dets, kit.calliper.class_id());
      const auto disc = best_of(dets, kit.disc.class_id());
      if (!cal || !disc) {
        ++skipped_calibration;
        continue;
      }
      calib.push_back(pipeline::chain_crop(scene.image, cal, disc, kCrop));
    }
    anomaly::CalibrationResult c =
        anomaly::calibrate_threshold(gan.generator, gan.discriminator, calib, kLambda, config.inversion);
    detail += fmt("; type %d threshold %.1f (normals min %.1f median %.1f)", type, c.threshold,
                  c.min, c.median);
    models.specialists.emplace(type, pipeline::Specialist{std::move(gan), std::move(c)});
  }
  detail += fmt("; %zu calibration scenes skipped; specialists ready at %.0f s",
                skipped_calibration, since(t_start));

  // Kit verdicts over conveyor passes.
  std::mt19937_64 rng(99);
  std::size_t clean = 0, clean_pass = 0, mismatched = 0, mismatched_nc = 0, defects = 0,
              defects_flagged = 0;
  double min_fraction = 1.0;
  std::string misses;
  std::size_t chaining_errors = 0;
  auto run = [&](const synthline::KitLayout& kit, const char* tag) -> std::optional<pipeline::KitDecision> {
    const auto video = conveyor_pass(kit, rng);
    try {
      return pipeline::run_kit_pipeline(video.frames, models, config, tag);
    } catch (const ChainingError&) {
      ++chaining_errors;
      misses += fmt(" %s type %d -> chaining error", tag, kit.disc.type_id);
      return std::nullopt;
    }
  };
  for (int type = 1; type <= kit::kNumTypes; ++type) {
    for (int i = 0; i < 5; ++i) {
      const auto r = run(synthline::default_kit(type, type), "clean");
      ++clean;
      if (!r) continue;
      const auto& d = *r;
      if (d.verdict == pipeline::Verdict::Pass) {
        ++clean_pass;
      } else {
        misses += fmt(" clean type %d -> %s%s", type, pipeline::to_string(d.verdict).c_str(),
                      d.anomaly ? fmt(" (%.1f > %.1f)", d.anomaly->score, d.anomaly->threshold).c_str()
                                : "");
      }
    }
    for (int i = 0; i < 2; ++i) {
      const int other = (type + i) % kit::kNumTypes + 1;
      const auto r = run(synthline::default_kit(type, other), "mismatched");
      ++mismatched;
      if (!r) continue;
      const auto& d = *r;
      if (d.verdict == pipeline::Verdict::Nonconform) {
        ++mismatched_nc;
      } else {
        misses += fmt(" disc %d/calliper %d -> %s", type, other,
                      pipeline::to_string(d.verdict).c_str());
      }
    }
    for (int i = 0; i < 10; ++i) {
      const synthline::KitLayout kit = defect_kit(type, rng);
      min_fraction = std::min(min_fraction, defect_fraction(kit, rng()));
      const auto r = run(kit, "defect");
      ++defects;
      if (!r) continue;
      const auto& d = *r;
      if (d.verdict == pipeline::Verdict::Anomaly) {
        ++defects_flagged;
      } else {
        misses += fmt(" defect type %d -> %s%s", type, pipeline::to_string(d.verdict).c_str(),
                      d.anomaly ? fmt(" (%.1f <= %.1f)", d.anomaly->score, d.anomaly->threshold).c_str()
                                : "");
      }
    }
  }
  const bool verdicts_ok = clean_pass == clean && mismatched_nc == mismatched &&
                           defects_flagged * 10 >= defects * 9 && min_fraction >= 0.04;
  detail += fmt("; verdicts: clean pass %zu/%zu, mismatched nonconform %zu/%zu, defects flagged "
                "%zu/%zu (smallest defect %.1f%% of crop), %zu chaining errors",
                clean_pass, clean, mismatched_nc, mismatched, defects_flagged, defects,
                100.0 * min_fraction, chaining_errors);
  if (!misses.empty()) detail += ";" + misses;
  return {detector_ok && verdicts_ok, detail};
}

}  // namespace linesight::acceptance
