#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "linesight/detmetrics.hpp"
#include "linesight/imagecore.hpp"
#include "linesight/kit_classes.hpp"

// Deterministic synthetic brake-kit imagery: parametric parts, defects,
// conveyor-pass videos and dataset manifests. Geometry is expressed for a
// 32 px reference frame and scaled with the rendered size.
namespace linesight::synthline {

using detmetrics::BoundingBox;
using imagecore::Image;
using kit::PartKind;

using Rgb = std::array<double, 3>;

struct PartSpec {
  PartKind kind = PartKind::Disc;
  int type_id = 1;
  // Disc: annulus with bolt holes. Calliper: bracket with a slot facing the
  // disc. Lengths are in reference pixels.
  double outer_radius = 7.0;   // disc
  double hub_radius = 2.5;     // disc
  int bolt_holes = 4;          // disc
  double body_width = 6.0;     // calliper
  double body_height = 12.0;   // calliper
  double slot_depth = 2.0;     // calliper
  Rgb color{0.5, 0.5, 0.5};

  int class_id() const { return kit::class_id(kind, type_id); }
  // Half extents of the part's bounding box around its center.
  double half_width() const;
  double half_height() const;
};

// Shipped geometry table for the six classes.
PartSpec default_part_spec(PartKind kind, int type_id);

enum class DefectKind { Scratch, Blob, MissingRegion };

std::string to_string(DefectKind kind);
DefectKind defect_kind_from_string(const std::string& name);

// Position is relative to the part center, in reference pixels.
struct DefectSpec {
  DefectKind kind = DefectKind::Blob;
  double dx = 0.0;
  double dy = 0.0;
  double size = 2.0;             // blob/missing radius, scratch length
  double intensity_delta = -0.4; // ignored by MissingRegion
};

struct PlacedPart {
  PartSpec spec;
  double cx = 16.0;  // center, reference pixels
  double cy = 16.0;
  std::vector<DefectSpec> defects;
};

struct Scene {
  std::size_t size = 32;
  // Render pixels per reference pixel; 0 means size / 32.
  double scale = 0.0;
  std::uint64_t background_seed = 0;
  std::uint64_t noise_seed = 0;
  double noise_amplitude = 0.01;
  // Parts whose visible box area falls below this fraction of the full box
  // get no ground truth.
  double min_visible_fraction = 0.0;
  std::vector<PlacedPart> parts;

  double effective_scale() const { return scale > 0.0 ? scale : size / 32.0; }
};

struct RenderedScene {
  Image image;
  // Ground truth per part still visible, clipped to the frame.
  std::vector<detmetrics::GroundTruth> ground_truth;
};

// Throws ValidationError if a defect leaves its part's bounding box.
RenderedScene render_scene(const Scene& scene);

// Pixel mask of the defect regions of a scene (1 where any defect applies).
imagecore::LabelMap defect_mask(const Scene& scene);

struct RenderedPart {
  Image image;
  BoundingBox gt;
};

// Single centered part on the textured background, scaled so its longer
// side spans 80% of the frame. size >= 16.
RenderedPart render_part(const PartSpec& spec, const std::vector<DefectSpec>& defects,
                         std::size_t size, std::uint64_t seed);

// Calliper on the left clamping a disc on the right, positioned by the
// calliper center.
struct KitLayout {
  PartSpec disc;
  PartSpec calliper;
  std::vector<DefectSpec> disc_defects;
  std::vector<DefectSpec> calliper_defects;
  double gap = 0.5;  // between calliper right edge and disc left edge
};

KitLayout default_kit(int disc_type, int calliper_type);
std::vector<PlacedPart> place_kit(const KitLayout& kit, double calliper_cx, double cy);
// Horizontal extent of a placed kit relative to the calliper center.
double kit_left_extent(const KitLayout& kit);
double kit_right_extent(const KitLayout& kit);

// Square crop spanning calliper left edge to disc right edge, vertically
// centered on the union of both boxes, clamped to the frame. Integer pixel
// rectangle.
struct CropRect {
  std::size_t x0 = 0;
  std::size_t y0 = 0;
  std::size_t width = 0;
  std::size_t height = 0;
};

CropRect kit_crop_rect(const BoundingBox& calliper, const BoundingBox& disc,
                       std::size_t frame_w, std::size_t frame_h);
Image crop_resized(const Image& frame, const CropRect& rect, std::size_t out_size);

// Conveyor pass: the kit moves by x_velocity per frame from x_start.
struct VideoScript {
  std::size_t frame_count = 60;
  double x_start = -22.0;
  double x_velocity = 1.0;
  double y_center = 16.0;
  std::size_t frame_size = 32;
  std::uint64_t noise_seed = 0;

  double calliper_x(std::size_t frame) const {
    return x_start + x_velocity * static_cast<double>(frame);
  }
};

struct RenderedVideo {
  std::vector<Image> frames;
  std::vector<detmetrics::ImageAnnotation> annotations;
};

RenderedVideo render_video(const KitLayout& kit, const VideoScript& script);

std::string frame_file_name(std::size_t index);  // frame_000001.ppm for index 0
void write_frames(const RenderedVideo& video, const std::filesystem::path& dir);
// Loads frame_*.ppm in lexical order.
std::vector<Image> load_frames(const std::filesystem::path& dir);

// Dataset generation. "kind" selects the content:
//   detection: per-class part images (optionally with a companion part)
//   kit_crops: square crops of complete kits of one type (anomaly training)
//   video: one conveyor pass written as frame_*.ppm plus annotations
struct DatasetConfig {
  std::string kind = "detection";
  std::size_t train_per_class = 20;
  std::size_t test_per_class = 15;
  std::vector<int> classes = {0, 1, 2, 3, 4, 5};
  std::size_t image_size = 32;
  double companion_probability = 0.5;
  // Chance that the main part carries one random surface blob.
  double defect_probability = 0.0;
  // kit_crops only
  int kit_type = 1;
  std::size_t crop_size = 32;
  double box_jitter = 0.5;
  std::size_t train_count = 64;
  std::size_t test_count = 16;
  // video only
  int disc_type = 1;
  int calliper_type = 1;
  std::size_t frame_count = 60;
  double x_velocity = 1.0;

  nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& j);
};

struct ManifestEntry {
  std::string image;
  std::string ann;  // empty when no annotation file exists
};

struct Manifest {
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> test;
  std::uint64_t seed = 0;
  nlohmann::json config;

  std::string to_json() const;
  static Manifest from_json(const std::string& text);
};

// Writes images, annotations and manifest.json under out_dir. Paths inside
// the manifest are relative to out_dir.
Manifest make_dataset(const DatasetConfig& config, std::uint64_t seed,
                      const std::filesystem::path& out_dir);

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

// splitmix64 combination used to derive per-item seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt);

// In-memory variants used by the training code paths.
struct DetectionSample {
  Image image;
  std::vector<detmetrics::GroundTruth> gt;
};

std::vector<DetectionSample> generate_detection_samples(const DatasetConfig& config,
                                                        std::uint64_t seed, bool test_split);

// Random complete-kit frame: both parts fully visible, at a random x and
// within kKitRowJitter of the vertical center (the line's conveyor row).
inline constexpr double kKitRowJitter = 1.5;
Scene random_kit_scene(const KitLayout& kit, std::size_t frame_size, std::uint64_t seed);

// Kit crops cut with kit_crop_rect on ground-truth boxes jittered by up to
// box_jitter px per coordinate.
std::vector<Image> generate_kit_crops(int kit_type, std::size_t count, std::size_t crop_size,
                                      double box_jitter, std::uint64_t seed,
                                      std::size_t frame_size = 32);

}  // namespace linesight::synthline
