#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <tuple>

#include "linesight/errors.hpp"
#include "linesight/synthline.hpp"

namespace linesight::synthline {

namespace {

constexpr int kSubsamples = 4;
constexpr double kScratchHalfWidth = 0.5;
constexpr double kScratchAngle = 0.6;
constexpr double kReferenceSize = 32.0;

struct Extent {
  double x0, y0, x1, y1;
};

bool inside_disc(const PartSpec& s, double px, double py) {
  const double r = std::hypot(px, py);
  if (r > s.outer_radius || r < s.hub_radius) return false;
  const double ring = 0.5 * (s.outer_radius + s.hub_radius) + 0.3;
  const double hole = 0.9;
  for (int k = 0; k < s.bolt_holes; ++k) {
    const double a = 2.0 * std::numbers::pi * k / s.bolt_holes + 0.4;
    if (std::hypot(px - ring * std::cos(a), py - ring * std::sin(a)) < hole) return false;
  }
  return true;
}

bool inside_calliper(const PartSpec& s, double px, double py) {
  const double hw = 0.5 * s.body_width;
  const double hh = 0.5 * s.body_height;
  if (std::abs(px) > hw || std::abs(py) > hh) return false;
  // Slot opening towards the disc.
  if (px > hw - s.slot_depth && std::abs(py) < 0.25 * s.body_height) return false;
  return true;
}

bool inside_part(const PartSpec& s, double px, double py) {
  return s.kind == PartKind::Disc ? inside_disc(s, px, py) : inside_calliper(s, px, py);
}

// Surface shade at a covered point, multiplied onto the base color.
double shade(const PartSpec& s, double px, double py) {
  if (s.kind == PartKind::Disc) {
    const double r = std::hypot(px, py);
    const double groove = std::abs(r - (s.outer_radius - 1.2)) < 0.35 ? 0.8 : 1.0;
    return (0.85 + 0.15 * r / s.outer_radius) * groove;
  }
  // Piston bore.
  const double bore = std::hypot(px + 0.5, py) < 1.3 ? 0.7 : 1.0;
  return (0.9 + 0.1 * (py + 0.5 * s.body_height) / s.body_height) * bore;
}

// Fixed per seed: three oriented sinusoids per channel plus a tint.
class Background {
 public:
  explicit Background(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> freq(0.3, 1.1);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    for (auto& w : waves_) w = {freq(rng), freq(rng) - 0.7, phase(rng)};
  }

  double value(double u, double v, std::size_t c) const {
    static constexpr double kTint[3] = {0.16, 0.15, 0.14};
    double acc = 0.0;
    for (std::size_t k = 0; k < waves_.size(); ++k) {
      const auto& [fx, fy, ph] = waves_[k];
      acc += std::sin(fx * u + fy * v + ph + 0.7 * static_cast<double>(c * k));
    }
    return kTint[c % 3] + 0.01 * acc;
  }

 private:
  std::array<std::array<double, 3>, 3> waves_;
};

Extent defect_extent(const DefectSpec& d) {
  if (d.kind == DefectKind::Scratch) {
    const double hx = 0.5 * d.size * std::cos(kScratchAngle);
    const double hy = 0.5 * d.size * std::sin(kScratchAngle);
    return {d.dx - hx - kScratchHalfWidth, d.dy - hy - kScratchHalfWidth,
            d.dx + hx + kScratchHalfWidth, d.dy + hy + kScratchHalfWidth};
  }
  return {d.dx - d.size, d.dy - d.size, d.dx + d.size, d.dy + d.size};
}

// Point in part-local reference coordinates.
bool inside_defect(const DefectSpec& d, double px, double py) {
  if (d.kind == DefectKind::Scratch) {
    const double ux = std::cos(kScratchAngle), uy = std::sin(kScratchAngle);
    const double rx = px - d.dx, ry = py - d.dy;
    const double t = std::clamp(rx * ux + ry * uy, -0.5 * d.size, 0.5 * d.size);
    return std::hypot(rx - t * ux, ry - t * uy) <= kScratchHalfWidth;
  }
  return std::hypot(px - d.dx, py - d.dy) <= d.size;
}

void validate_defect(const PartSpec& part, const DefectSpec& d) {
  if (!(d.size > 0.0) || !std::isfinite(d.dx) || !std::isfinite(d.dy) ||
      !std::isfinite(d.intensity_delta)) {
    throw ValidationError("defect needs a positive size and finite parameters");
  }
  const Extent e = defect_extent(d);
  const double hw = part.half_width(), hh = part.half_height();
  if (e.x0 < -hw || e.x1 > hw || e.y0 < -hh || e.y1 > hh) {
    throw ValidationError(to_string(d.kind) + " defect at (" + std::to_string(d.dx) + "," +
                          std::to_string(d.dy) + ") size " + std::to_string(d.size) +
                          " leaves the " + kit::class_name(part.class_id()) + " bounds");
  }
}

void validate_part(const PartSpec& s) {
  if (s.type_id < 1 || s.type_id > kit::kNumTypes) {
    throw ValidationError("part type must be 1.." + std::to_string(kit::kNumTypes));
  }
  if (s.kind == PartKind::Disc) {
    if (!(s.outer_radius > s.hub_radius) || s.hub_radius < 0.0 || s.bolt_holes < 0) {
      throw ValidationError("disc needs outer_radius > hub_radius >= 0");
    }
  } else if (!(s.body_width > 0.0) || !(s.body_height > 0.0) || s.slot_depth < 0.0 ||
             s.slot_depth >= s.body_width) {
    throw ValidationError("calliper needs positive body and slot_depth < body_width");
  }
  for (double c : s.color) {
    if (!(c >= 0.0 && c <= 1.0)) throw ValidationError("part color outside [0,1]");
  }
}

BoundingBox part_box(const PlacedPart& p, double scale) {
  return BoundingBox((p.cx - p.spec.half_width()) * scale, (p.cy - p.spec.half_height()) * scale,
                     (p.cx + p.spec.half_width()) * scale, (p.cy + p.spec.half_height()) * scale);
}

// Pixel index range [lo, hi) touched by [a, b] in render pixels.
std::pair<std::size_t, std::size_t> pixel_span(double a, double b, std::size_t n) {
  const double lo = std::clamp(std::floor(a), 0.0, static_cast<double>(n));
  const double hi = std::clamp(std::ceil(b), 0.0, static_cast<double>(n));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <typename Fn>
void for_each_defect_pixel(const PlacedPart& part, const DefectSpec& d, double scale,
                           std::size_t size, Fn&& fn) {
  const Extent e = defect_extent(d);
  const auto [x0, x1] = pixel_span((part.cx + e.x0) * scale, (part.cx + e.x1) * scale, size);
  const auto [y0, y1] = pixel_span((part.cy + e.y0) * scale, (part.cy + e.y1) * scale, size);
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t x = x0; x < x1; ++x) {
      const double u = (x + 0.5) / scale - part.cx;
      const double v = (y + 0.5) / scale - part.cy;
      if (inside_defect(d, u, v)) fn(y, x);
    }
  }
}

void validate_scene(const Scene& scene) {
  if (scene.size < 1) throw ValidationError("scene size must be positive");
  if (!(scene.effective_scale() > 0.0)) throw ValidationError("scene scale must be positive");
  if (scene.noise_amplitude < 0.0) throw ValidationError("noise amplitude must be >= 0");
  for (const PlacedPart& p : scene.parts) {
    validate_part(p.spec);
    for (const DefectSpec& d : p.defects) validate_defect(p.spec, d);
  }
}

}  // namespace

double PartSpec::half_width() const {
  return kind == PartKind::Disc ? outer_radius : 0.5 * body_width;
}

double PartSpec::half_height() const {
  return kind == PartKind::Disc ? outer_radius : 0.5 * body_height;
}

PartSpec default_part_spec(PartKind kind, int type_id) {
  if (type_id < 1 || type_id > kit::kNumTypes) {
    throw ValidationError("part type must be 1.." + std::to_string(kit::kNumTypes));
  }
  PartSpec s;
  s.kind = kind;
  s.type_id = type_id;
  if (kind == PartKind::Disc) {
    static constexpr double kRadius[3] = {7.0, 6.5, 7.5};
    static constexpr double kHub[3] = {2.5, 2.0, 3.0};
    static constexpr int kHoles[3] = {4, 5, 6};
    static constexpr Rgb kColor[3] = {{0.45, 0.45, 0.48}, {0.64, 0.60, 0.54}, {0.86, 0.86, 0.82}};
    s.outer_radius = kRadius[type_id - 1];
    s.hub_radius = kHub[type_id - 1];
    s.bolt_holes = kHoles[type_id - 1];
    s.color = kColor[type_id - 1];
  } else {
    static constexpr double kWidth[3] = {6.0, 5.0, 7.0};
    static constexpr double kHeight[3] = {12.0, 13.0, 11.0};
    static constexpr double kSlot[3] = {2.0, 1.5, 2.5};
    static constexpr Rgb kColor[3] = {{0.80, 0.20, 0.15}, {0.25, 0.40, 0.75}, {0.90, 0.80, 0.20}};
    s.body_width = kWidth[type_id - 1];
    s.body_height = kHeight[type_id - 1];
    s.slot_depth = kSlot[type_id - 1];
    s.color = kColor[type_id - 1];
  }
  return s;
}

std::string to_string(DefectKind kind) {
  switch (kind) {
    case DefectKind::Scratch: return "scratch";
    case DefectKind::Blob: return "blob";
    case DefectKind::MissingRegion: return "missing_region";
  }
  return "unknown";
}

DefectKind defect_kind_from_string(const std::string& name) {
  if (name == "scratch") return DefectKind::Scratch;
  if (name == "blob") return DefectKind::Blob;
  if (name == "missing_region") return DefectKind::MissingRegion;
  throw ValidationError("unknown defect kind '" + name + "'");
}

RenderedScene render_scene(const Scene& scene) {
  validate_scene(scene);
  const std::size_t n = scene.size;
  const double scale = scene.effective_scale();

  const Background field(scene.background_seed);
  imagecore::Tensor bg({n, n, 3});
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        bg.at(y, x, c) = field.value((x + 0.5) / scale, (y + 0.5) / scale, c);
      }
    }
  }
  imagecore::Tensor px = bg;

  RenderedScene out;
  for (const PlacedPart& part : scene.parts) {
    const BoundingBox full = part_box(part, scale);
    const auto [x0, x1] = pixel_span(full.x_min(), full.x_max(), n);
    const auto [y0, y1] = pixel_span(full.y_min(), full.y_max(), n);
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t x = x0; x < x1; ++x) {
        int covered = 0;
        double shade_sum = 0.0;
        for (int sy = 0; sy < kSubsamples; ++sy) {
          for (int sx = 0; sx < kSubsamples; ++sx) {
            const double u = (x + (sx + 0.5) / kSubsamples) / scale - part.cx;
            const double v = (y + (sy + 0.5) / kSubsamples) / scale - part.cy;
            if (inside_part(part.spec, u, v)) {
              ++covered;
              shade_sum += shade(part.spec, u, v);
            }
          }
        }
        if (covered == 0) continue;
        const double cov = static_cast<double>(covered) / (kSubsamples * kSubsamples);
        const double s = shade_sum / covered;
        for (std::size_t c = 0; c < 3; ++c) {
          const double fg = std::clamp(part.spec.color[c] * s, 0.0, 1.0);
          px.at(y, x, c) = (1.0 - cov) * px.at(y, x, c) + cov * fg;
        }
      }
    }
    for (const DefectSpec& d : part.defects) {
      std::size_t area = 0;
      for_each_defect_pixel(part, d, scale, n, [&](std::size_t y, std::size_t x) {
        ++area;
        for (std::size_t c = 0; c < 3; ++c) {
          double& v = px.at(y, x, c);
          v = d.kind == DefectKind::MissingRegion ? bg.at(y, x, c)
                                                  : std::clamp(v + d.intensity_delta, 0.0, 1.0);
        }
      });
      const Extent e = defect_extent(d);
      const bool in_frame = (part.cx + e.x0) * scale >= 0.0 && (part.cy + e.y0) * scale >= 0.0 &&
                            (part.cx + e.x1) * scale <= n && (part.cy + e.y1) * scale <= n;
      if (area == 0 && in_frame) {
        throw ValidationError(to_string(d.kind) + " defect covers no pixel at this scale");
      }
    }
    const auto clipped = detmetrics::clip_box(full, static_cast<double>(n), static_cast<double>(n));
    if (clipped && clipped->area() >= scene.min_visible_fraction * full.area()) {
      out.ground_truth.push_back({part.spec.class_id(), *clipped});
    }
  }

  if (scene.noise_amplitude > 0.0) {
    std::mt19937_64 rng(scene.noise_seed);
    std::uniform_real_distribution<double> noise(-scene.noise_amplitude, scene.noise_amplitude);
    for (double& v : px.data()) v = std::clamp(v + noise(rng), 0.0, 1.0);
  }
  out.image = Image(std::move(px));
  return out;
}

imagecore::LabelMap defect_mask(const Scene& scene) {
  validate_scene(scene);
  imagecore::LabelMap mask(scene.size, scene.size, 0);
  const double scale = scene.effective_scale();
  for (const PlacedPart& part : scene.parts) {
    for (const DefectSpec& d : part.defects) {
      for_each_defect_pixel(part, d, scale, scene.size,
                            [&](std::size_t y, std::size_t x) { mask.at(y, x) = 1; });
    }
  }
  return mask;
}

RenderedPart render_part(const PartSpec& spec, const std::vector<DefectSpec>& defects,
                         std::size_t size, std::uint64_t seed) {
  if (size < 16) throw ValidationError("render size must be >= 16, got " + std::to_string(size));
  validate_part(spec);
  Scene scene;
  scene.size = size;
  scene.scale = 0.8 * size / (2.0 * std::max(spec.half_width(), spec.half_height()));
  scene.background_seed = seed;
  scene.noise_seed = derive_seed(seed, 1);
  const double centre = 0.5 * size / scene.scale;
  scene.parts.push_back({spec, centre, centre, defects});
  RenderedScene r = render_scene(scene);
  return {std::move(r.image), r.ground_truth.at(0).box};
}

KitLayout default_kit(int disc_type, int calliper_type) {
  KitLayout kit;
  kit.disc = default_part_spec(PartKind::Disc, disc_type);
  kit.calliper = default_part_spec(PartKind::Calliper, calliper_type);
  return kit;
}

double kit_left_extent(const KitLayout& kit) { return kit.calliper.half_width(); }

double kit_right_extent(const KitLayout& kit) {
  return kit.calliper.half_width() + kit.gap + 2.0 * kit.disc.half_width();
}

std::vector<PlacedPart> place_kit(const KitLayout& kit, double calliper_cx, double cy) {
  const double disc_cx = calliper_cx + kit.calliper.half_width() + kit.gap + kit.disc.half_width();
  return {{kit.calliper, calliper_cx, cy, kit.calliper_defects},
          {kit.disc, disc_cx, cy, kit.disc_defects}};
}

CropRect kit_crop_rect(const BoundingBox& calliper, const BoundingBox& disc, std::size_t frame_w,
                       std::size_t frame_h) {
  const double side = disc.x_max() - calliper.x_min();
  if (!(side > 0.0)) {
    throw GeometryError("disc right edge " + std::to_string(disc.x_max()) +
                        " is not right of calliper left edge " +
                        std::to_string(calliper.x_min()));
  }
  const double W = static_cast<double>(frame_w), H = static_cast<double>(frame_h);
  const double cy = 0.5 * (std::min(calliper.y_min(), disc.y_min()) +
                           std::max(calliper.y_max(), disc.y_max()));
  double y0 = cy - 0.5 * side;
  y0 = side <= H ? std::clamp(y0, 0.0, H - side) : 0.0;
  const double x0 = std::clamp(calliper.x_min(), 0.0, W);
  const double x1 = std::clamp(calliper.x_min() + side, 0.0, W);
  const double y1 = std::min(y0 + side, H);
  auto span = [](double lo, double hi, std::size_t n) {
    auto a = std::min(static_cast<std::size_t>(std::floor(lo)), n - 1);
    auto b = std::min(static_cast<std::size_t>(std::ceil(hi)), n);
    return std::pair{a, std::max(b, a + 1) - a};
  };
  CropRect r;
  std::tie(r.x0, r.width) = span(x0, x1, frame_w);
  std::tie(r.y0, r.height) = span(y0, y1, frame_h);
  return r;
}

Image crop_resized(const Image& frame, const CropRect& rect, std::size_t out_size) {
  if (out_size < 1) throw ValidationError("crop output size must be positive");
  return imagecore::resize_bilinear(frame.crop(rect.y0, rect.x0, rect.height, rect.width),
                                    out_size, out_size);
}

RenderedVideo render_video(const KitLayout& kit, const VideoScript& script) {
  if (script.frame_count < 1) throw ValidationError("video needs at least one frame");
  if (script.frame_size < 16) throw ValidationError("video frame size must be >= 16");
  validate_part(kit.disc);
  validate_part(kit.calliper);

  // Both parts must enter the view at least once.
  const double ref_w = kReferenceSize;
  bool calliper_seen = false, disc_seen = false;
  for (std::size_t f = 0; f < script.frame_count; ++f) {
    const auto parts = place_kit(kit, script.calliper_x(f), script.y_center);
    auto visible = [&](const PlacedPart& p) {
      return p.cx + p.spec.half_width() > 0.0 && p.cx - p.spec.half_width() < ref_w &&
             p.cy + p.spec.half_height() > 0.0 && p.cy - p.spec.half_height() < ref_w;
    };
    calliper_seen = calliper_seen || visible(parts[0]);
    disc_seen = disc_seen || visible(parts[1]);
  }
  if (!calliper_seen || !disc_seen) {
    throw ValidationError("video trajectory never brings both parts into view");
  }

  RenderedVideo video;
  for (std::size_t f = 0; f < script.frame_count; ++f) {
    Scene scene;
    scene.size = script.frame_size;
    scene.background_seed = script.noise_seed;
    scene.noise_seed = derive_seed(script.noise_seed, f + 1);
    scene.parts = place_kit(kit, script.calliper_x(f), script.y_center);
    RenderedScene r = render_scene(scene);
    detmetrics::ImageAnnotation ann;
    ann.image = frame_file_name(f);
    for (const auto& g : r.ground_truth) ann.objects.push_back({g.class_id, g.box, std::nullopt});
    video.frames.push_back(std::move(r.image));
    video.annotations.push_back(std::move(ann));
  }
  return video;
}

Scene random_kit_scene(const KitLayout& kit, std::size_t frame_size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double left = kit_left_extent(kit) + 0.5;
  const double right = kit_right_extent(kit) + 0.5;
  const double hh =
      std::max(kit.calliper.half_height(), kit.disc.half_height()) + 0.5;
  if (left + right > kReferenceSize || 2.0 * hh > kReferenceSize) {
    throw ValidationError("kit does not fit in the frame");
  }
  std::uniform_real_distribution<double> ux(left, kReferenceSize - right);
  const double mid = 0.5 * kReferenceSize;
  std::uniform_real_distribution<double> uy(std::max(hh, mid - kKitRowJitter),
                                            std::min(kReferenceSize - hh, mid + kKitRowJitter));
  Scene scene;
  scene.size = frame_size;
  const double cx = ux(rng);
  const double cy = uy(rng);
  scene.background_seed = derive_seed(seed, 1);
  scene.noise_seed = derive_seed(seed, 2);
  scene.parts = place_kit(kit, cx, cy);
  return scene;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace linesight::synthline
