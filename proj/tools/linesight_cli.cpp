#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "linesight/errors.hpp"
#include "linesight/pipeline.hpp"
#include "linesight/segpatch.hpp"

namespace fs = std::filesystem;
using namespace linesight;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;
constexpr int kExitFlagged = 3;

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("bad threshold '" + item + "'");
    }
  }
  if (out.empty()) throw ValidationError("no thresholds given");
  return out;
}

struct LoadedSplit {
  std::vector<imagecore::Image> images;
  std::vector<std::vector<detmetrics::GroundTruth>> gt;
  std::vector<std::string> names;
};

LoadedSplit load_split(const fs::path& manifest_path, const std::string& split,
                       bool need_annotations) {
  const synthline::Manifest m = synthline::load_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  const auto& entries = split == "train" ? m.train : m.test;
  if (split != "train" && split != "test") throw ValidationError("split must be train or test");
  if (entries.empty()) throw ValidationError("manifest has no " + split + " entries");
  LoadedSplit out;
  for (const auto& e : entries) {
    out.images.push_back(imagecore::load_image(base / e.image));
    out.names.push_back(e.image);
    if (need_annotations) {
      if (e.ann.empty()) throw ValidationError("entry " + e.image + " has no annotation");
      out.gt.push_back(detmetrics::load_annotation(base / e.ann).ground_truth());
    }
  }
  return out;
}

struct InversionFlags {
  anomaly::InversionParams params;
  void add(CLI::App* cmd) {
    cmd->add_option("--iterations", params.iterations, "Inversion iterations")->capture_default_str();
    cmd->add_option("--step-size", params.step_size, "Inversion Adam step size")->capture_default_str();
    cmd->add_option("--restarts", params.restarts, "Random inversion starts")->capture_default_str();
    cmd->add_option("--inversion-seed", params.seed, "Latent start seed")->capture_default_str();
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"linesight: brake-kit inspection engine"};
  app.require_subcommand(1);
  int exit_code = kExitOk;

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  fs::path synth_config, synth_out;
  std::uint64_t synth_seed = 0;
  synth->add_option("--config", synth_config, "Dataset config JSON")->required();
  synth->add_option("--seed", synth_seed, "Seed")->required();
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->callback([&] {
    const auto cfg = synthline::DatasetConfig::from_json(nlohmann::json::parse(read_text(synth_config)));
    const auto m = synthline::make_dataset(cfg, synth_seed, synth_out);
    std::printf("wrote %zu train and %zu test items to %s\n", m.train.size(), m.test.size(),
                synth_out.c_str());
  });

  // train-detector
  auto* tdet = app.add_subcommand("train-detector", "Train the part detector");
  fs::path tdet_manifest, tdet_out;
  detector::TrainConfig tdet_cfg;
  tdet_cfg.adam.lr = 0.002;
  tdet_cfg.final_lr_fraction = 0.1;
  tdet->add_option("--manifest", tdet_manifest, "Detection dataset manifest")->required();
  tdet->add_option("--steps", tdet_cfg.steps, "Training steps")->required();
  tdet->add_option("--seed", tdet_cfg.seed, "Seed")->required();
  tdet->add_option("--out", tdet_out, "Model path")->required();
  tdet->add_option("--batch", tdet_cfg.batch, "Batch size")->capture_default_str();
  tdet->add_option("--lr", tdet_cfg.adam.lr, "Adam learning rate")->capture_default_str();
  tdet->add_option("--final-lr-fraction", tdet_cfg.final_lr_fraction,
                   "Final learning rate as a fraction of --lr")->capture_default_str();
  tdet->callback([&] {
    const LoadedSplit data = load_split(tdet_manifest, "train", true);
    std::vector<detector::TrainSample> samples;
    for (std::size_t i = 0; i < data.images.size(); ++i) samples.push_back({data.images[i], data.gt[i]});
    detector::DetectorConfig arch;
    arch.class_names = kit::class_names();
    arch.input_size = data.images.front().height();
    const auto r = detector::train_detector(samples, tdet_cfg, arch);
    detector::save_detector(r.model, tdet_out);
    std::printf("trained %zu steps, final loss %.4f, saved %s\n", r.loss_log.size(),
                r.loss_log.back(), tdet_out.c_str());
  });

  // detect-eval
  auto* deval = app.add_subcommand("detect-eval", "Precision/recall sweep of a detector");
  fs::path deval_model, deval_manifest, deval_report;
  std::string deval_thresholds, deval_split = "test";
  double deval_iou = 0.5;
  deval->add_option("--model", deval_model, "Detector model")->required();
  deval->add_option("--manifest", deval_manifest, "Detection dataset manifest")->required();
  deval->add_option("--thresholds", deval_thresholds, "Comma-separated probability thresholds")->required();
  deval->add_option("--report", deval_report, "CSV report path")->required();
  deval->add_option("--split", deval_split, "train or test")->capture_default_str();
  deval->add_option("--iou", deval_iou, "IoU needed for a true positive")->capture_default_str();
  deval->callback([&] {
    const auto thresholds = parse_thresholds(deval_thresholds);
    const auto model = detector::load_detector(deval_model);
    const LoadedSplit data = load_split(deval_manifest, deval_split, true);
    const double lowest = *std::min_element(thresholds.begin(), thresholds.end());
    std::vector<std::vector<detmetrics::Detection>> preds;
    for (const auto& img : data.images) preds.push_back(detector::detect(model, img, lowest));
    const auto rows = detmetrics::pr_sweep(preds, data.gt, thresholds, deval_iou);
    const std::string csv = detmetrics::sweep_to_csv(rows);
    write_text(deval_report, csv);
    std::cout << csv;
  });

  // video-vote
  auto* vote = app.add_subcommand("video-vote", "Vote on the kit parts seen in a video");
  fs::path vote_model, vote_frames, vote_report;
  temporalvote::VoteConfig vote_cfg;
  vote->add_option("--model", vote_model, "Detector model")->required();
  vote->add_option("--frames", vote_frames, "Directory of frame_*.ppm")->required();
  vote->add_option("--patience", vote_cfg.patience, "Empty frames that end the vote")->capture_default_str();
  vote->add_option("--threshold", vote_cfg.prob_threshold, "Detection probability threshold")->capture_default_str();
  vote->add_option("--report", vote_report, "Decision JSON path")->required();
  vote->callback([&] {
    const auto model = detector::load_detector(vote_model);
    const auto frames = synthline::load_frames(vote_frames);
    const auto dets = pipeline::detect_frames(model, frames, vote_cfg.prob_threshold, 0.5);
    const auto r = temporalvote::run_session(dets, vote_cfg, vote_frames.filename().string());
    write_text(vote_report, temporalvote::decision_json(r));
    const std::vector<temporalvote::SessionResult> rows = {r};
    std::cout << temporalvote::count_table_csv(rows);
    std::printf("disc: %s, calliper: %s\n", r.disc.to_string().c_str(),
                r.calliper.to_string().c_str());
  });

  // train-gan
  auto* tgan = app.add_subcommand("train-gan", "Train an anomaly model on normal kit crops");
  fs::path tgan_manifest, tgan_out;
  anomaly::GanTrainConfig tgan_cfg;
  anomaly::GanConfig tgan_arch;
  tgan->add_option("--manifest", tgan_manifest, "Kit-crop dataset manifest")->required();
  tgan->add_option("--steps", tgan_cfg.steps, "Training steps")->required();
  tgan->add_option("--batch", tgan_cfg.batch, "Batch size")->capture_default_str();
  tgan->add_option("--out", tgan_out, "Model path")->required();
  tgan->add_option("--seed", tgan_cfg.seed, "Seed")->capture_default_str();
  tgan->add_option("--latent", tgan_arch.latent_dim, "Latent size")->capture_default_str();
  tgan->add_option("--generator-channels", tgan_arch.generator_channels, "Generator block channels");
  tgan->add_option("--discriminator-channels", tgan_arch.discriminator_channels,
                   "Discriminator block channels");
  tgan->add_option("--d-lr", tgan_cfg.d_adam.lr, "Discriminator learning rate")->capture_default_str();
  tgan->add_option("--d-beta1", tgan_cfg.d_adam.beta1, "Discriminator Adam beta1")->capture_default_str();
  tgan->add_option("--g-lr", tgan_cfg.g_adam.lr, "Generator learning rate")->capture_default_str();
  tgan->add_option("--g-beta1", tgan_cfg.g_adam.beta1, "Generator Adam beta1")->capture_default_str();
  tgan->add_option("--ema", tgan_cfg.generator_ema, "Generator weight averaging decay")->capture_default_str();
  tgan->callback([&] {
    const LoadedSplit data = load_split(tgan_manifest, "train", false);
    tgan_arch.image_size = data.images.front().height();
    tgan_arch.channels = data.images.front().channels();
    const auto r = anomaly::train_gan(data.images, tgan_cfg, tgan_arch);
    anomaly::save_gan(r.model, tgan_out);
    std::printf("trained %zu steps, final d_loss %.4f g_loss %.4f, saved %s\n", r.loss_log.size(),
                r.loss_log.back().d_loss, r.loss_log.back().g_loss, tgan_out.c_str());
  });

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Anomaly threshold from normal images");
  fs::path cal_model, cal_manifest, cal_out;
  double cal_lambda = 0.1;
  std::string cal_split = "test";
  InversionFlags cal_inv;
  cal->add_option("--model", cal_model, "Anomaly model")->required();
  cal->add_option("--manifest", cal_manifest, "Kit-crop dataset manifest")->required();
  cal->add_option("--lambda", cal_lambda, "Weight of the discrimination loss")->capture_default_str();
  cal->add_option("--out", cal_out, "Calibration JSON path")->required();
  cal->add_option("--split", cal_split, "train or test")->capture_default_str();
  cal_inv.add(cal);
  cal->callback([&] {
    const auto gan = anomaly::load_gan(cal_model);
    const LoadedSplit data = load_split(cal_manifest, cal_split, false);
    const auto c = anomaly::calibrate_threshold(gan.generator, gan.discriminator, data.images,
                                                cal_lambda, cal_inv.params);
    anomaly::save_calibration(c, cal_out);
    std::cout << c.to_json();
  });

  // score
  auto* score = app.add_subcommand("score", "Anomaly score of one image");
  fs::path score_model, score_cal, score_image, score_colormap;
  InversionFlags score_inv;
  score->add_option("--model", score_model, "Anomaly model")->required();
  score->add_option("--calibration", score_cal, "Calibration JSON")->required();
  score->add_option("--image", score_image, "Query image")->required();
  score->add_option("--colormap", score_colormap, "Residual colormap PPM")->required();
  score_inv.add(score);
  score->callback([&] {
    const auto gan = anomaly::load_gan(score_model);
    const auto c = anomaly::load_calibration(score_cal);
    const auto img = imagecore::load_image(score_image);
    const auto rep = anomaly::anomaly_score(img, gan.generator, gan.discriminator, c.lambda,
                                            score_inv.params);
    imagecore::save_image(anomaly::render_colormap(rep.residual_signed), score_colormap);
    const bool flagged = rep.score > c.threshold;
    const std::vector<anomaly::ScoreRow> rows = {{score_image.filename().string(), rep.score,
                                                  rep.residual_loss, rep.discrimination_loss,
                                                  flagged}};
    std::cout << anomaly::score_rows_to_csv(rows);
    if (flagged) exit_code = kExitFlagged;
  });

  // seg-eval
  auto* seg = app.add_subcommand("seg-eval", "Dataset mIoU of palette-encoded label maps");
  fs::path seg_pred, seg_gt, seg_palette, seg_report;
  seg->add_option("--pred", seg_pred, "Predicted label-map directory")->required();
  seg->add_option("--gt", seg_gt, "Ground-truth label-map directory")->required();
  seg->add_option("--palette", seg_palette, "Palette JSON")->required();
  seg->add_option("--report", seg_report, "CSV report path")->required();
  seg->callback([&] {
    const auto palette = segpatch::load_palette(seg_palette);
    if (!fs::is_directory(seg_gt)) throw IoError("not a directory: " + seg_gt.string());
    std::vector<fs::path> names;
    for (const auto& e : fs::directory_iterator(seg_gt)) {
      const auto ext = e.path().extension();
      if (ext == ".ppm" || ext == ".pnm") names.push_back(e.path().filename());
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) throw ValidationError("no label maps in " + seg_gt.string());
    std::vector<imagecore::LabelMap> preds, gts;
    for (const auto& n : names) {
      gts.push_back(segpatch::decode_labelmap(imagecore::load_image(seg_gt / n), palette));
      preds.push_back(segpatch::decode_labelmap(imagecore::load_image(seg_pred / n), palette));
    }
    std::vector<std::string> class_names;
    for (const auto& e : palette.entries()) class_names.push_back(e.name);
    const auto eval = segpatch::evaluate_segmentation(preds, gts, palette.num_classes(), class_names);
    const std::string csv = segpatch::evaluation_to_csv(eval);
    write_text(seg_report, csv);
    std::cout << csv;
  });

  // run-pipeline
  auto* run = app.add_subcommand("run-pipeline", "Full kit inspection of one video");
  fs::path run_config, run_frames, run_out;
  run->add_option("--config", run_config, "Pipeline config JSON")->required();
  run->add_option("--frames", run_frames, "Directory of frame_*.ppm")->required();
  run->add_option("--out", run_out, "Output directory")->required();
  run->callback([&] {
    const auto cfg = pipeline::load_pipeline_config(run_config);
    const auto models = pipeline::load_pipeline_models(cfg);
    const auto frames = synthline::load_frames(run_frames);
    const auto d = pipeline::run_kit_pipeline(frames, models, cfg, run_frames.filename().string());
    pipeline::write_decision(d, run_out);
    std::cout << d.to_json();
    if (d.verdict == pipeline::Verdict::Anomaly || d.verdict == pipeline::Verdict::Nonconform) {
      exit_code = kExitFlagged;
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return exit_code;
}
