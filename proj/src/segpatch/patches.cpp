#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "linesight/errors.hpp"
#include "linesight/segpatch.hpp"

namespace linesight::segpatch {

namespace fs = std::filesystem;
using imagecore::Tensor;
using nlohmann::json;

namespace {

void check_grid(std::size_t h, std::size_t w, std::size_t rows, std::size_t cols) {
  if (rows < 1 || cols < 1) throw ValidationError("patch grid needs rows, cols >= 1");
  if (h % rows != 0 || w % cols != 0) {
    throw DimensionError("image " + std::to_string(w) + "x" + std::to_string(h) +
                         " (WxH) is not divisible by a " + std::to_string(cols) + "x" +
                         std::to_string(rows) + " grid");
  }
}

// Returns the patch height/width after checking count, shapes and cells.
template <typename P, typename Dims>
std::pair<std::size_t, std::size_t> check_patches(std::span<const P> patches, std::size_t rows,
                                                  std::size_t cols, Dims dims) {
  if (rows < 1 || cols < 1) throw ValidationError("patch grid needs rows, cols >= 1");
  if (patches.size() != rows * cols) {
    throw DimensionError("expected " + std::to_string(rows * cols) + " patches, got " +
                         std::to_string(patches.size()));
  }
  const auto [ph, pw] = dims(patches[0]);
  std::vector<bool> filled(rows * cols, false);
  for (const P& p : patches) {
    if (dims(p) != std::pair{ph, pw}) throw DimensionError("patches have mixed shapes");
    if (p.row >= rows || p.col >= cols) {
      throw DimensionError("patch cell (" + std::to_string(p.row) + "," +
                           std::to_string(p.col) + ") outside the grid");
    }
    const std::size_t cell = p.row * cols + p.col;
    if (filled[cell]) {
      throw DimensionError("patch cell (" + std::to_string(p.row) + "," +
                           std::to_string(p.col) + ") appears twice");
    }
    filled[cell] = true;
  }
  return {ph, pw};
}

}  // namespace

std::vector<ImagePatch> split_patches(const Image& img, std::size_t rows, std::size_t cols) {
  check_grid(img.height(), img.width(), rows, cols);
  const std::size_t ph = img.height() / rows, pw = img.width() / cols;
  std::vector<ImagePatch> out;
  out.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.push_back({r, c, img.crop(r * ph, c * pw, ph, pw)});
  }
  return out;
}

std::vector<LabelPatch> split_patches(const LabelMap& labels, std::size_t rows,
                                      std::size_t cols) {
  check_grid(labels.height(), labels.width(), rows, cols);
  const std::size_t ph = labels.height() / rows, pw = labels.width() / cols;
  std::vector<LabelPatch> out;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      LabelMap p(ph, pw);
      for (std::size_t y = 0; y < ph; ++y) {
        for (std::size_t x = 0; x < pw; ++x) p.at(y, x) = labels.at(r * ph + y, c * pw + x);
      }
      out.push_back({r, c, std::move(p)});
    }
  }
  return out;
}

Image reassemble(std::span<const ImagePatch> patches, std::size_t rows, std::size_t cols) {
  const auto [ph, pw] = check_patches(patches, rows, cols, [](const ImagePatch& p) {
    return std::pair{p.image.height(), p.image.width()};
  });
  const std::size_t ch = patches[0].image.channels();
  for (const auto& p : patches) {
    if (p.image.channels() != ch) throw DimensionError("patches have mixed channel counts");
  }
  const std::size_t w = pw * cols;
  Tensor out({ph * rows, w, ch});
  for (const auto& p : patches) {
    const auto src = p.image.pixels().data();
    for (std::size_t y = 0; y < ph; ++y) {
      std::copy(src.begin() + static_cast<std::ptrdiff_t>(y * pw * ch),
                src.begin() + static_cast<std::ptrdiff_t>((y + 1) * pw * ch),
                out.data().begin() +
                    static_cast<std::ptrdiff_t>(((p.row * ph + y) * w + p.col * pw) * ch));
    }
  }
  return Image(std::move(out));
}

LabelMap reassemble(std::span<const LabelPatch> patches, std::size_t rows, std::size_t cols) {
  const auto [ph, pw] = check_patches(patches, rows, cols, [](const LabelPatch& p) {
    return std::pair{p.labels.height(), p.labels.width()};
  });
  LabelMap out(ph * rows, pw * cols);
  for (const auto& p : patches) {
    for (std::size_t y = 0; y < ph; ++y) {
      for (std::size_t x = 0; x < pw; ++x) out.at(p.row * ph + y, p.col * pw + x) = p.labels.at(y, x);
    }
  }
  return out;
}

ClassPalette::ClassPalette(std::vector<PaletteEntry> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw ValidationError("palette needs at least one class");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].id != static_cast<int>(i)) {
      throw ValidationError("palette ids must be 0..n-1 in order; entry " + std::to_string(i) +
                            " has id " + std::to_string(entries_[i].id));
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (entries_[j].rgb == entries_[i].rgb) {
        throw ValidationError("palette classes " + std::to_string(j) + " and " +
                              std::to_string(i) + " share a color");
      }
    }
  }
}

ClassPalette ClassPalette::standard() {
  return ClassPalette({{0, "background", {0, 0, 0}},
                       {1, "gross", {0, 0, 255}},
                       {2, "machined", {255, 255, 0}},
                       {3, "hole", {128, 128, 128}},
                       {4, "defect", {255, 0, 0}}});
}

std::optional<int> ClassPalette::lookup(const std::array<std::uint8_t, 3>& rgb) const {
  for (const auto& e : entries_) {
    if (e.rgb == rgb) return e.id;
  }
  return std::nullopt;
}

std::string ClassPalette::to_json() const {
  json j = json::array();
  for (const auto& e : entries_) {
    j.push_back({{"id", e.id}, {"name", e.name}, {"rgb", {e.rgb[0], e.rgb[1], e.rgb[2]}}});
  }
  return j.dump(2) + "\n";
}

ClassPalette ClassPalette::from_json(const std::string& text) {
  std::vector<PaletteEntry> entries;
  try {
    for (const auto& e : json::parse(text)) {
      const auto rgb = e.at("rgb").get<std::vector<int>>();
      if (rgb.size() != 3) throw ValidationError("palette rgb needs three components");
      PaletteEntry p{e.at("id").get<int>(), e.at("name").get<std::string>(), {}};
      for (std::size_t k = 0; k < 3; ++k) {
        if (rgb[k] < 0 || rgb[k] > 255) throw ValidationError("palette rgb outside 0..255");
        p.rgb[k] = static_cast<std::uint8_t>(rgb[k]);
      }
      entries.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad palette: ") + e.what());
  }
  return ClassPalette(std::move(entries));
}

ClassPalette load_palette(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read palette " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ClassPalette::from_json(ss.str());
}

void save_palette(const ClassPalette& palette, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << palette.to_json();
}

Image encode_labelmap(const LabelMap& labels, const ClassPalette& palette) {
  Image out(labels.height(), labels.width(), 3);
  for (std::size_t y = 0; y < labels.height(); ++y) {
    for (std::size_t x = 0; x < labels.width(); ++x) {
      const int id = labels.at(y, x);
      if (id < 0 || id >= palette.num_classes()) {
        throw ValidationError("label " + std::to_string(id) + " at (" + std::to_string(y) + "," +
                              std::to_string(x) + ") has no palette color");
      }
      const auto& rgb = palette.entries()[static_cast<std::size_t>(id)].rgb;
      for (std::size_t k = 0; k < 3; ++k) out.set(y, x, k, rgb[k] / 255.0);
    }
  }
  return out;
}

LabelMap decode_labelmap(const Image& img, const ClassPalette& palette) {
  if (img.channels() != 3) throw DimensionError("palette images must have 3 channels");
  LabelMap out(img.height(), img.width());
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      std::array<std::uint8_t, 3> rgb;
      for (std::size_t k = 0; k < 3; ++k) {
        rgb[k] = static_cast<std::uint8_t>(std::lround(img.at(y, x, k) * 255.0));
      }
      const auto id = palette.lookup(rgb);
      if (!id) {
        throw ValidationError("color (" + std::to_string(rgb[0]) + "," + std::to_string(rgb[1]) +
                              "," + std::to_string(rgb[2]) + ") at pixel (" + std::to_string(y) +
                              "," + std::to_string(x) + ") is not in the palette");
      }
      out.at(y, x) = *id;
    }
  }
  return out;
}

LabelMap resize_nearest(const LabelMap& labels, std::size_t out_h, std::size_t out_w) {
  if (out_h < 1 || out_w < 1 || labels.height() < 1 || labels.width() < 1) {
    throw DimensionError("resize needs non-empty label maps");
  }
  auto src = [](std::size_t dst, std::size_t in, std::size_t out) {
    return std::min(in - 1, (2 * dst + 1) * in / (2 * out));
  };
  LabelMap out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = src(y, labels.height(), out_h);
    for (std::size_t x = 0; x < out_w; ++x) out.at(y, x) = labels.at(sy, src(x, labels.width(), out_w));
  }
  return out;
}

SegEvaluation evaluate_segmentation(std::span<const LabelMap> preds,
                                    std::span<const LabelMap> gts, int num_classes,
                                    const std::vector<std::string>& names) {
  if (preds.empty()) throw ValidationError("segmentation evaluation needs at least one pair");
  if (preds.size() != gts.size()) {
    throw DimensionError(std::to_string(preds.size()) + " predictions for " +
                         std::to_string(gts.size()) + " ground truths");
  }
  if (!names.empty() && names.size() != static_cast<std::size_t>(num_classes)) {
    throw ValidationError("class name count does not match num_classes");
  }
  detmetrics::PixelConfusion conf(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) conf.add(preds[i], gts[i]);
  SegEvaluation e;
  std::size_t correct = 0, total = 0;
  for (int c = 0; c < num_classes; ++c) {
    e.classes.push_back({c, names.empty() ? "class_" + std::to_string(c) : names[c],
                         conf.intersection(c), conf.union_count(c), conf.class_iou(c)});
    correct += conf.intersection(c);
    for (int p = 0; p < num_classes; ++p) total += conf.count(c, p);
  }
  e.mean_iou = conf.mean_iou();
  e.pixel_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return e;
}

std::string evaluation_to_csv(const SegEvaluation& e) {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  std::string out = "class,name,intersection,union,iou\n";
  for (const auto& c : e.classes) {
    out += std::to_string(c.id) + "," + c.name + "," + std::to_string(c.intersection) + "," +
           std::to_string(c.union_count) + "," + (c.iou ? fmt(*c.iou) : "") + "\n";
  }
  out += "mean,,,," + fmt(e.mean_iou) + "\n";
  return out;
}

}  // namespace linesight::segpatch
