#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "linesight/errors.hpp"
#include "linesight/kit_classes.hpp"
#include "linesight/pipeline.hpp"

namespace linesight::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

void PipelineConfig::validate() const {
  if (detector.empty()) throw ConfigError("pipeline config needs a detector path");
  for (int t = 1; t <= kit::kNumTypes; ++t) {
    if (!specialists.count(t)) {
      throw ConfigError("no anomaly model configured for kit type " + std::to_string(t));
    }
  }
  for (const auto& [t, s] : specialists) {
    if (t < 1 || t > kit::kNumTypes) throw ConfigError("unknown kit type " + std::to_string(t));
    if (s.model.empty() || s.calibration.empty()) {
      throw ConfigError("kit type " + std::to_string(t) + " needs model and calibration paths");
    }
  }
  if (!(prob_threshold >= 0.0 && prob_threshold <= 1.0)) {
    throw ConfigError("prob_threshold must be in [0,1]");
  }
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0,1]");
  if (crop_size < 1) throw ConfigError("crop_size must be >= 1");
  if (inversion.iterations < 1 || inversion.restarts < 1 || !(inversion.step_size > 0.0)) {
    throw ConfigError("inversion needs iterations, restarts >= 1 and a positive step size");
  }
}

PipelineConfig PipelineConfig::from_json(const std::string& text, const fs::path& base) {
  PipelineConfig c;
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
  };
  try {
    const json j = json::parse(text);
    c.detector = resolve(j.at("detector").get<std::string>());
    for (const auto& [key, v] : j.at("specialists").items()) {
      int type = 0;
      try {
        type = std::stoi(key);
      } catch (const std::exception&) {
        throw ConfigError("specialist key '" + key + "' is not a kit type");
      }
      c.specialists[type] = {resolve(v.at("model").get<std::string>()),
                             resolve(v.at("calibration").get<std::string>())};
    }
    c.prob_threshold = j.value("prob_threshold", c.prob_threshold);
    c.patience = j.value("patience", c.patience);
    c.nms_iou = j.value("nms_iou", c.nms_iou);
    c.lambda = j.value("lambda", c.lambda);
    c.crop_size = j.value("crop_size", c.crop_size);
    if (j.contains("inversion")) {
      const json& inv = j.at("inversion");
      c.inversion.iterations = inv.value("iterations", c.inversion.iterations);
      c.inversion.step_size = inv.value("step_size", c.inversion.step_size);
      c.inversion.seed = inv.value("seed", c.inversion.seed);
      c.inversion.restarts = inv.value("restarts", c.inversion.restarts);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string PipelineConfig::to_json() const {
  json sp = json::object();
  for (const auto& [t, s] : specialists) {
    sp[std::to_string(t)] = {{"model", s.model.string()}, {"calibration", s.calibration.string()}};
  }
  const json j = {{"detector", detector.string()},
                  {"specialists", sp},
                  {"prob_threshold", prob_threshold},
                  {"patience", patience},
                  {"nms_iou", nms_iou},
                  {"lambda", lambda},
                  {"crop_size", crop_size},
                  {"inversion",
                   {{"iterations", inversion.iterations},
                    {"step_size", inversion.step_size},
                    {"seed", inversion.seed},
                    {"restarts", inversion.restarts}}}};
  return j.dump(2) + "\n";
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read pipeline config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return PipelineConfig::from_json(ss.str(), path.parent_path());
}

PipelineModels load_pipeline_models(const PipelineConfig& config) {
  config.validate();
  PipelineModels m;
  m.detector = detector::load_detector(config.detector);
  if (m.detector.config.num_classes != kit::kNumClasses) {
    throw ConfigError("detector has " + std::to_string(m.detector.config.num_classes) +
                      " classes, expected " + std::to_string(kit::kNumClasses));
  }
  for (const auto& [t, s] : config.specialists) {
    Specialist sp{anomaly::load_gan(s.model), anomaly::load_calibration(s.calibration)};
    if (sp.calibration.lambda != config.lambda) {
      throw ConfigError("calibration for kit type " + std::to_string(t) + " uses lambda " +
                        std::to_string(sp.calibration.lambda) + ", config uses " +
                        std::to_string(config.lambda));
    }
    m.specialists.emplace(t, std::move(sp));
  }
  return m;
}

synthline::CropRect chain_crop_rect(const Image& frame, const Detection& calliper,
                                    const Detection& disc) {
  if (kit::kind_of(calliper.class_id) != kit::PartKind::Calliper ||
      kit::kind_of(disc.class_id) != kit::PartKind::Disc) {
    throw ValidationError("chain_crop needs one calliper and one disc detection");
  }
  return synthline::kit_crop_rect(calliper.box, disc.box, frame.width(), frame.height());
}

Image chain_crop(const Image& frame, const std::optional<Detection>& calliper,
                 const std::optional<Detection>& disc, std::size_t out_size) {
  if (!calliper) throw ChainingError("no calliper detection to anchor the crop");
  if (!disc) throw ChainingError("no disc detection to anchor the crop");
  return synthline::crop_resized(frame, chain_crop_rect(frame, *calliper, *disc), out_size);
}

BestFrame select_best_frame(std::span<const std::vector<Detection>> frames, int calliper_class,
                            int disc_class, double prob_threshold) {
  std::optional<BestFrame> best;
  double best_score = -1.0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Detection* c = nullptr;
    const Detection* d = nullptr;
    for (const auto& det : frames[i]) {
      if (det.probability < prob_threshold) continue;
      if (det.class_id == calliper_class && (!c || det.probability > c->probability)) c = &det;
      if (det.class_id == disc_class && (!d || det.probability > d->probability)) d = &det;
    }
    if (!c || !d) continue;
    const double s = std::min(c->probability, d->probability);
    if (s > best_score) {
      best_score = s;
      best = BestFrame{i, *c, *d};
    }
  }
  if (!best) throw ChainingError("no frame holds both the calliper and the disc");
  return *best;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::Pass: return "pass";
    case Verdict::Anomaly: return "anomaly";
    case Verdict::Nonconform: return "nonconform";
    case Verdict::Undecided: return "undecided";
  }
  return "undecided";
}

std::vector<std::vector<Detection>> detect_frames(const detector::DetectorModel& model,
                                                  std::span<const Image> frames,
                                                  double prob_threshold, double nms_iou) {
  std::vector<std::vector<Detection>> out;
  out.reserve(frames.size());
  for (const Image& f : frames) out.push_back(detector::detect(model, f, prob_threshold, nms_iou));
  return out;
}

KitDecision decide_kit(std::span<const Image> frames,
                       std::span<const std::vector<Detection>> detections,
                       const PipelineModels& models, const PipelineConfig& config,
                       std::string video) {
  if (frames.size() != detections.size()) {
    throw DimensionError(std::to_string(detections.size()) + " detection lists for " +
                         std::to_string(frames.size()) + " frames");
  }
  KitDecision d;
  d.video = video;
  d.vote = temporalvote::run_session(detections, {config.patience, config.prob_threshold},
                                     std::move(video));
  if (!d.vote.kit_decided()) return d;
  const int type = d.vote.disc.type_id;
  d.conforming = type == d.vote.calliper.type_id;
  if (!d.conforming) {
    d.verdict = Verdict::Nonconform;
    return d;
  }
  const auto it = models.specialists.find(type);
  if (it == models.specialists.end()) {
    throw ConfigError("no anomaly model loaded for kit type " + std::to_string(type));
  }
  const Specialist& sp = it->second;
  const BestFrame best = select_best_frame(
      detections.first(d.vote.frames_consumed), kit::class_id(kit::PartKind::Calliper, type),
      kit::class_id(kit::PartKind::Disc, type), config.prob_threshold);
  const Image& frame = frames[best.index];
  d.best_frame = best.index;
  d.crop_rect = chain_crop_rect(frame, best.calliper, best.disc);
  Image crop = chain_crop(frame, best.calliper, best.disc, config.crop_size);
  const auto& shape = sp.gan.generator.image_shape();
  const Image query = crop.height() == shape[0] && crop.width() == shape[1]
                          ? crop
                          : imagecore::resize_bilinear(crop, shape[0], shape[1]);
  const anomaly::AnomalyReport rep = anomaly::anomaly_score(
      query, sp.gan.generator, sp.gan.discriminator, config.lambda, config.inversion);
  d.anomaly = KitAnomaly{type,
                         rep.score,
                         rep.residual_loss,
                         rep.discrimination_loss,
                         rep.lambda,
                         sp.calibration.threshold,
                         std::move(crop),
                         anomaly::render_colormap(rep.residual_signed)};
  d.verdict = rep.score > sp.calibration.threshold ? Verdict::Anomaly : Verdict::Pass;
  return d;
}

KitDecision run_kit_pipeline(std::span<const Image> frames, const PipelineModels& models,
                             const PipelineConfig& config, std::string video) {
  const auto dets = detect_frames(models.detector, frames, config.prob_threshold, config.nms_iou);
  return decide_kit(frames, dets, models, config, std::move(video));
}

std::string KitDecision::to_json() const {
  auto vote_value = [](const temporalvote::GroupDecision& g) -> json {
    if (g.decided()) return g.type_id;
    return g.to_string();
  };
  json j = {{"video", video},
            {"disc", vote_value(vote.disc)},
            {"calliper", vote_value(vote.calliper)},
            {"conforming", conforming},
            {"verdict", to_string(verdict)},
            {"best_frame", nullptr},
            {"crop", nullptr},
            {"anomaly", nullptr}};
  if (best_frame) j["best_frame"] = *best_frame;
  if (crop_rect) {
    j["crop"] = {{"x0", crop_rect->x0},
                 {"y0", crop_rect->y0},
                 {"width", crop_rect->width},
                 {"height", crop_rect->height},
                 {"vertical_anchor", "union_center"}};
  }
  if (anomaly) {
    j["anomaly"] = {{"kit_type", anomaly->kit_type},
                    {"score", anomaly->score},
                    {"l_r", anomaly->residual_loss},
                    {"l_d", anomaly->discrimination_loss},
                    {"lambda", anomaly->lambda},
                    {"threshold", anomaly->threshold}};
  }
  return j.dump(2) + "\n";
}

void write_decision(const KitDecision& d, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  auto write = [&](const fs::path& name, const std::string& text) {
    std::ofstream out(out_dir / name);
    if (!out) throw IoError("cannot write " + (out_dir / name).string());
    out << text;
  };
  write("decision.json", d.to_json());
  const std::vector<temporalvote::SessionResult> rows = {d.vote};
  write("counts.csv", temporalvote::count_table_csv(rows));
  if (d.anomaly) {
    imagecore::save_image(d.anomaly->crop, out_dir / "crop.ppm");
    imagecore::save_image(d.anomaly->colormap, out_dir / "colormap.ppm");
  }
}

}  // namespace linesight::pipeline
