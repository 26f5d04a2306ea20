#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "linesight/errors.hpp"
#include "linesight/synthline.hpp"

namespace linesight::synthline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kReferenceSize = 32.0;
constexpr double kMinVisible = 0.5;

enum Salt : std::uint64_t { kTrain = 11, kTest = 13, kCrops = 17 };

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

void validate_config(const DatasetConfig& c) {
  require(c.kind == "detection" || c.kind == "kit_crops" || c.kind == "video",
          "dataset kind must be detection, kit_crops or video, got '" + c.kind + "'");
  require(c.image_size >= 16, "image_size must be >= 16");
  if (c.kind == "detection") {
    require(!c.classes.empty(), "dataset needs at least one class");
    require(c.train_per_class >= 1 && c.test_per_class >= 1, "per-class counts must be >= 1");
    for (int id : c.classes) {
      require(kit::valid_class(id), "class id " + std::to_string(id) + " out of range");
    }
    require(c.companion_probability >= 0.0 && c.companion_probability <= 1.0,
            "companion_probability must be in [0,1]");
    require(c.defect_probability >= 0.0 && c.defect_probability <= 1.0,
            "defect_probability must be in [0,1]");
  } else if (c.kind == "kit_crops") {
    require(c.kit_type >= 1 && c.kit_type <= kit::kNumTypes, "kit_type must be 1..3");
    require(c.train_count >= 1 && c.test_count >= 1, "crop counts must be >= 1");
    require(c.crop_size >= 8, "crop_size must be >= 8");
    require(c.box_jitter >= 0.0, "box_jitter must be >= 0");
  } else {
    require(c.disc_type >= 1 && c.disc_type <= kit::kNumTypes, "disc_type must be 1..3");
    require(c.calliper_type >= 1 && c.calliper_type <= kit::kNumTypes,
            "calliper_type must be 1..3");
    require(c.frame_count >= 1, "frame_count must be >= 1");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string index_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  }
}

double visible_fraction(const PlacedPart& p) {
  const double hw = p.spec.half_width(), hh = p.spec.half_height();
  const double w = std::clamp(p.cx + hw, 0.0, kReferenceSize) - std::clamp(p.cx - hw, 0.0, kReferenceSize);
  const double h = std::clamp(p.cy + hh, 0.0, kReferenceSize) - std::clamp(p.cy - hh, 0.0, kReferenceSize);
  return w * h / (4.0 * hw * hh);
}

// Blob of radius 1.5..3 and delta +-0.3..0.6 on the part body.
DefectSpec random_blob(const PartSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  DefectSpec d;
  d.kind = DefectKind::Blob;
  d.size = 1.5 + 1.5 * unit(rng);
  d.intensity_delta = (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.3 + 0.3 * unit(rng));
  if (spec.kind == PartKind::Disc) {
    const double r = std::max(0.0, spec.outer_radius - d.size) * unit(rng);
    const double a = 2.0 * std::numbers::pi * unit(rng);
    d.dx = r * std::cos(a);
    d.dy = r * std::sin(a);
  } else {
    d.size = std::min(d.size, 0.5 * spec.half_width());
    d.dx = (spec.half_width() - d.size) * (2.0 * unit(rng) - 1.0);
    d.dy = (spec.half_height() - d.size) * (2.0 * unit(rng) - 1.0);
  }
  return d;
}

// One detection image whose main part has class `cls`; with some probability
// the kit companion (random type) is placed next to it. A companion is either
// out of view or at least half visible, so every part in view is labeled.
DetectionSample detection_sample(int cls, const DatasetConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> type(1, kit::kNumTypes);
  const PartSpec main = default_part_spec(kit::kind_of(cls), kit::type_of(cls));
  const bool companion = unit(rng) < c.companion_probability;
  KitLayout kit;
  if (main.kind == PartKind::Disc) {
    kit = default_kit(main.type_id, type(rng));
  } else {
    kit = default_kit(type(rng), main.type_id);
  }

  std::vector<DefectSpec> defects;
  std::mt19937_64 defect_rng(derive_seed(seed, 4));
  if (std::uniform_real_distribution<double>(0.0, 1.0)(defect_rng) < c.defect_probability) {
    defects.push_back(random_blob(main, defect_rng));
  }

  Scene scene;
  scene.size = c.image_size;
  scene.background_seed = derive_seed(seed, 1);
  scene.noise_seed = derive_seed(seed, 2);
  scene.min_visible_fraction = kMinVisible;
  const double hw = main.half_width(), hh = main.half_height();
  for (int attempt = 0;; ++attempt) {
    const double cx = hw + 0.5 + unit(rng) * (kReferenceSize - 2 * hw - 1.0);
    const double cy = hh + 0.5 + unit(rng) * (kReferenceSize - 2 * hh - 1.0);
    if (!companion) {
      scene.parts = {{main, cx, cy, defects}};
      break;
    }
    const double calliper_cx =
        main.kind == PartKind::Disc ? cx - kit.calliper.half_width() - kit.gap - hw : cx;
    scene.parts = place_kit(kit, calliper_cx, cy);
    (main.kind == PartKind::Disc ? scene.parts[1] : scene.parts[0]).defects = defects;
    const PlacedPart& other = main.kind == PartKind::Disc ? scene.parts[0] : scene.parts[1];
    const double f = visible_fraction(other);
    if (f == 0.0 || f >= kMinVisible || attempt >= 100) break;
  }
  RenderedScene r = render_scene(scene);
  return {std::move(r.image), std::move(r.ground_truth)};
}

detmetrics::ImageAnnotation to_annotation(const std::string& image,
                                          const std::vector<detmetrics::GroundTruth>& gt) {
  detmetrics::ImageAnnotation ann;
  ann.image = image;
  for (const auto& g : gt) ann.objects.push_back({g.class_id, g.box, std::nullopt});
  return ann;
}

}  // namespace

json DatasetConfig::to_json() const {
  json j = {{"kind", kind}, {"image_size", image_size}};
  if (kind == "detection") {
    j["train_per_class"] = train_per_class;
    j["test_per_class"] = test_per_class;
    j["classes"] = classes;
    j["companion_probability"] = companion_probability;
    j["defect_probability"] = defect_probability;
  } else if (kind == "kit_crops") {
    j["kit_type"] = kit_type;
    j["crop_size"] = crop_size;
    j["box_jitter"] = box_jitter;
    j["train_count"] = train_count;
    j["test_count"] = test_count;
  } else {
    j["disc_type"] = disc_type;
    j["calliper_type"] = calliper_type;
    j["frame_count"] = frame_count;
    j["x_velocity"] = x_velocity;
  }
  return j;
}

DatasetConfig DatasetConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("dataset config must be a JSON object");
  static const std::set<std::string> known = {
      "kind",       "image_size", "train_per_class", "test_per_class", "classes",
      "companion_probability",    "kit_type",        "crop_size",      "box_jitter",
      "train_count", "test_count", "disc_type",      "calliper_type",  "frame_count",
      "x_velocity",  "defect_probability"};
  DatasetConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (!known.contains(key)) throw ConfigError("unknown dataset config key '" + key + "'");
    }
    c.kind = j.value("kind", c.kind);
    c.image_size = j.value("image_size", c.image_size);
    c.train_per_class = j.value("train_per_class", c.train_per_class);
    c.test_per_class = j.value("test_per_class", c.test_per_class);
    c.classes = j.value("classes", c.classes);
    c.companion_probability = j.value("companion_probability", c.companion_probability);
    c.defect_probability = j.value("defect_probability", c.defect_probability);
    c.kit_type = j.value("kit_type", c.kit_type);
    c.crop_size = j.value("crop_size", c.crop_size);
    c.box_jitter = j.value("box_jitter", c.box_jitter);
    c.train_count = j.value("train_count", c.train_count);
    c.test_count = j.value("test_count", c.test_count);
    c.disc_type = j.value("disc_type", c.disc_type);
    c.calliper_type = j.value("calliper_type", c.calliper_type);
    c.frame_count = j.value("frame_count", c.frame_count);
    c.x_velocity = j.value("x_velocity", c.x_velocity);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad dataset config: ") + e.what());
  }
  validate_config(c);
  return c;
}

std::string Manifest::to_json() const {
  auto entries = [](const std::vector<ManifestEntry>& v) {
    json a = json::array();
    for (const auto& e : v) a.push_back({{"image", e.image}, {"ann", e.ann}});
    return a;
  };
  json j = {{"train", entries(train)}, {"test", entries(test)}, {"seed", seed},
            {"config", config}};
  return j.dump(2) + "\n";
}

Manifest Manifest::from_json(const std::string& text) {
  Manifest m;
  try {
    const json j = json::parse(text);
    auto entries = [](const json& a) {
      std::vector<ManifestEntry> v;
      for (const auto& e : a) {
        v.push_back({e.at("image").get<std::string>(), e.value("ann", std::string())});
      }
      return v;
    };
    m.train = entries(j.at("train"));
    m.test = entries(j.at("test"));
    m.seed = j.value("seed", std::uint64_t{0});
    m.config = j.value("config", json::object());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad manifest: ") + e.what());
  }
  return m;
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return Manifest::from_json(ss.str());
}

void save_manifest(const Manifest& manifest, const fs::path& path) {
  write_text(path, manifest.to_json());
}

std::vector<DetectionSample> generate_detection_samples(const DatasetConfig& config,
                                                        std::uint64_t seed, bool test_split) {
  validate_config(config);
  if (config.kind != "detection") throw ValidationError("not a detection dataset config");
  const std::size_t per_class = test_split ? config.test_per_class : config.train_per_class;
  const std::uint64_t split_seed = derive_seed(seed, test_split ? kTest : kTrain);
  std::vector<DetectionSample> out;
  for (int cls : config.classes) {
    for (std::size_t i = 0; i < per_class; ++i) {
      out.push_back(detection_sample(
          cls, config, derive_seed(split_seed, static_cast<std::uint64_t>(cls) * 100000 + i)));
    }
  }
  return out;
}

std::vector<Image> generate_kit_crops(int kit_type, std::size_t count, std::size_t crop_size,
                                      double box_jitter, std::uint64_t seed,
                                      std::size_t frame_size) {
  const KitLayout kit = default_kit(kit_type, kit_type);
  std::vector<Image> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = derive_seed(derive_seed(seed, kCrops), i);
    const RenderedScene r = render_scene(random_kit_scene(kit, frame_size, s));
    std::mt19937_64 rng(derive_seed(s, 3));
    std::uniform_real_distribution<double> jitter(-box_jitter, box_jitter);
    auto jittered = [&](const BoundingBox& b) {
      const double x0 = b.x_min() + jitter(rng), x1 = b.x_max() + jitter(rng);
      const double y0 = b.y_min() + jitter(rng), y1 = b.y_max() + jitter(rng);
      return BoundingBox(x0, y0, std::max(x1, x0 + 1.0), std::max(y1, y0 + 1.0));
    };
    const BoundingBox calliper = jittered(r.ground_truth.at(0).box);
    const BoundingBox disc = jittered(r.ground_truth.at(1).box);
    out.push_back(crop_resized(r.image, kit_crop_rect(calliper, disc, frame_size, frame_size),
                               crop_size));
  }
  return out;
}

Manifest make_dataset(const DatasetConfig& config, std::uint64_t seed, const fs::path& out_dir) {
  validate_config(config);
  ensure_dir(out_dir);
  Manifest m;
  m.seed = seed;
  m.config = config.to_json();

  if (config.kind == "detection") {
    for (bool test : {false, true}) {
      const std::string split = test ? "test" : "train";
      ensure_dir(out_dir / split);
      const auto samples = generate_detection_samples(config, seed, test);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::string image = split + "/" + index_name(i) + ".ppm";
        const std::string ann = split + "/" + index_name(i) + ".json";
        imagecore::save_image(samples[i].image, out_dir / image);
        detmetrics::save_annotation(to_annotation(image, samples[i].gt), out_dir / ann);
        (test ? m.test : m.train).push_back({image, ann});
      }
    }
  } else if (config.kind == "kit_crops") {
    for (bool test : {false, true}) {
      const std::string split = test ? "test" : "train";
      ensure_dir(out_dir / split);
      const auto crops =
          generate_kit_crops(config.kit_type, test ? config.test_count : config.train_count,
                             config.crop_size, config.box_jitter,
                             derive_seed(seed, test ? kTest : kTrain), config.image_size);
      for (std::size_t i = 0; i < crops.size(); ++i) {
        const std::string image = split + "/" + index_name(i) + ".ppm";
        imagecore::save_image(crops[i], out_dir / image);
        (test ? m.test : m.train).push_back({image, ""});
      }
    }
  } else {
    const KitLayout kit = default_kit(config.disc_type, config.calliper_type);
    VideoScript script;
    script.frame_count = config.frame_count;
    script.x_velocity = config.x_velocity;
    // The kit passes the frame center at the middle frame.
    const double centred = 0.5 * (kReferenceSize - kit_right_extent(kit) + kit_left_extent(kit));
    script.x_start = centred - 0.5 * config.x_velocity * static_cast<double>(config.frame_count - 1);
    script.frame_size = config.image_size;
    script.noise_seed = seed;
    const RenderedVideo video = render_video(kit, script);
    ensure_dir(out_dir / "frames");
    write_frames(video, out_dir / "frames");
    for (const auto& ann : video.annotations) {
      const fs::path ann_path = fs::path(ann.image).replace_extension(".json");
      m.test.push_back({"frames/" + ann.image, "frames/" + ann_path.string()});
    }
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

std::string frame_file_name(std::size_t index) { return "frame_" + index_name(index + 1) + ".ppm"; }

void write_frames(const RenderedVideo& video, const fs::path& dir) {
  ensure_dir(dir);
  for (std::size_t i = 0; i < video.frames.size(); ++i) {
    imagecore::save_image(video.frames[i], dir / frame_file_name(i));
    if (i < video.annotations.size()) {
      detmetrics::save_annotation(video.annotations[i],
                                  dir / fs::path(frame_file_name(i)).replace_extension(".json"));
    }
  }
}

std::vector<Image> load_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("frame directory not found: " + dir.string());
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.starts_with("frame_") && (name.ends_with(".ppm") || name.ends_with(".pgm"))) {
      paths.push_back(e.path());
    }
  }
  std::sort(paths.begin(), paths.end());
  std::vector<Image> frames;
  for (const auto& p : paths) frames.push_back(imagecore::load_image(p));
  return frames;
}

}  // namespace linesight::synthline
