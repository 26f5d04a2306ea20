#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "linesight/anomaly.hpp"
#include "linesight/detector.hpp"
#include "linesight/synthline.hpp"
#include "linesight/temporalvote.hpp"

// Kit inspection chain: detect parts in every frame, vote on the part types,
// check that they match, crop the kit from the best frame and score it with
// the anomaly model trained for that kit type.
namespace linesight::pipeline {

using detmetrics::Detection;
using imagecore::Image;

struct SpecialistPaths {
  std::filesystem::path model;
  std::filesystem::path calibration;
};

struct PipelineConfig {
  std::filesystem::path detector;
  std::map<int, SpecialistPaths> specialists;  // keyed by kit type
  double prob_threshold = 0.95;
  std::size_t patience = 100;
  double nms_iou = 0.5;
  double lambda = 0.1;
  anomaly::InversionParams inversion{};
  std::size_t crop_size = 200;

  void validate() const;
  // Relative model paths resolve against `base`.
  static PipelineConfig from_json(const std::string& text, const std::filesystem::path& base = {});
  std::string to_json() const;
};

PipelineConfig load_pipeline_config(const std::filesystem::path& path);

struct Specialist {
  anomaly::GanModel gan;
  anomaly::CalibrationResult calibration;
};

struct PipelineModels {
  detector::DetectorModel detector;
  std::map<int, Specialist> specialists;
};

// ConfigError when a kit type has no specialist or a calibration was made at
// a different lambda.
PipelineModels load_pipeline_models(const PipelineConfig& config);

// Square crop of side disc.x_max - calliper.x_min starting at the calliper's
// left edge, centered vertically on the union of both boxes and clamped to
// the frame, resized to out_size. ChainingError if either part is missing.
Image chain_crop(const Image& frame, const std::optional<Detection>& calliper,
                 const std::optional<Detection>& disc, std::size_t out_size = 200);
synthline::CropRect chain_crop_rect(const Image& frame, const Detection& calliper,
                                    const Detection& disc);

struct BestFrame {
  std::size_t index;
  Detection calliper;
  Detection disc;
};

// Frame maximizing min(calliper prob, disc prob) over frames holding both
// classes at or above prob_threshold; the earliest frame wins ties.
// ChainingError if no frame qualifies.
BestFrame select_best_frame(std::span<const std::vector<Detection>> frames, int calliper_class,
                            int disc_class, double prob_threshold);

enum class Verdict { Pass, Anomaly, Nonconform, Undecided };
std::string to_string(Verdict v);

struct KitAnomaly {
  int kit_type;
  double score;
  double residual_loss;
  double discrimination_loss;
  double lambda;
  double threshold;
  Image crop;
  Image colormap;
};

struct KitDecision {
  std::string video;
  temporalvote::SessionResult vote;
  bool conforming = false;
  std::optional<std::size_t> best_frame;
  std::optional<synthline::CropRect> crop_rect;
  std::optional<KitAnomaly> anomaly;
  Verdict verdict = Verdict::Undecided;

  // {"video","disc","calliper","conforming","best_frame","verdict","crop","anomaly"}
  std::string to_json() const;
};

// Per-frame detections at the configured threshold.
std::vector<std::vector<Detection>> detect_frames(const detector::DetectorModel& model,
                                                  std::span<const Image> frames,
                                                  double prob_threshold, double nms_iou);

KitDecision decide_kit(std::span<const Image> frames,
                       std::span<const std::vector<Detection>> detections,
                       const PipelineModels& models, const PipelineConfig& config,
                       std::string video = "");
KitDecision run_kit_pipeline(std::span<const Image> frames, const PipelineModels& models,
                             const PipelineConfig& config, std::string video = "");

// decision.json and counts.csv, plus crop.ppm and colormap.ppm when scored.
void write_decision(const KitDecision& d, const std::filesystem::path& out_dir);

}  // namespace linesight::pipeline
