#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "linesight/imagecore.hpp"

namespace linesight::detmetrics {

// Axis-aligned box in pixel coordinates. Always non-degenerate.
class BoundingBox {
 public:
  // Throws ValidationError unless x_min < x_max and y_min < y_max (finite).
  BoundingBox(double x_min, double y_min, double x_max, double y_max);

  double x_min() const noexcept { return x_min_; }
  double y_min() const noexcept { return y_min_; }
  double x_max() const noexcept { return x_max_; }
  double y_max() const noexcept { return y_max_; }
  double width() const noexcept { return x_max_ - x_min_; }
  double height() const noexcept { return y_max_ - y_min_; }
  double area() const noexcept { return width() * height(); }
  double center_x() const noexcept { return 0.5 * (x_min_ + x_max_); }
  double center_y() const noexcept { return 0.5 * (y_min_ + y_max_); }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;

 private:
  double x_min_, y_min_, x_max_, y_max_;
};

// Intersection of a box with [0,w]x[0,h]; nullopt if nothing remains.
std::optional<BoundingBox> clip_box(const BoundingBox& box, double w, double h);

struct Detection {
  // Throws ValidationError if probability is outside [0,1].
  Detection(BoundingBox box, int class_id, double probability);

  BoundingBox box;
  int class_id;
  double probability;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct GroundTruth {
  int class_id;
  BoundingBox box;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

double intersection_area(const BoundingBox& a, const BoundingBox& b);

// IA / (AD + AG - IA).
double iou(const BoundingBox& a, const BoundingBox& b);

// Greedy per-class suppression, highest probability first (ties by x_min).
// Output keeps the greedy visiting order.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold);

struct ClassCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  ClassCounts& operator+=(const ClassCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

class MatchReport {
 public:
  MatchReport() = default;
  explicit MatchReport(std::map<int, ClassCounts> counts) : counts_(std::move(counts)) {}

  ClassCounts counts(int class_id) const;
  const std::map<int, ClassCounts>& all() const noexcept { return counts_; }
  std::vector<int> classes() const;

  void add_tp(int class_id) { ++counts_[class_id].tp; }
  void add_fp(int class_id) { ++counts_[class_id].fp; }
  void add_fn(int class_id) { ++counts_[class_id].fn; }
  // Registers a class with zero counts so it shows up in reports.
  void touch(int class_id) { counts_[class_id]; }
  MatchReport& operator+=(const MatchReport& other);

  friend bool operator==(const MatchReport&, const MatchReport&) = default;

 private:
  std::map<int, ClassCounts> counts_;
};

// TP: same class and IoU > iou_min against a still-unmatched ground truth,
// visiting predictions by descending probability (ties by x_min).
// Everything else is FP; unmatched ground truths are FN.
MatchReport match_detections(std::span<const Detection> preds,
                             std::span<const GroundTruth> gts,
                             double iou_min = 0.5);

// nullopt stands for "undefined" (zero denominator).
std::optional<double> precision(const ClassCounts& c);
std::optional<double> recall(const ClassCounts& c);
inline std::optional<double> precision(const MatchReport& r, int class_id) {
  return precision(r.counts(class_id));
}
inline std::optional<double> recall(const MatchReport& r, int class_id) {
  return recall(r.counts(class_id));
}

// "n/a" for undefined, otherwise fixed notation.
std::string format_ratio(std::optional<double> value);

struct SweepRow {
  double threshold;
  MatchReport report;
  std::map<int, std::optional<double>> precision;
  std::map<int, std::optional<double>> recall;
};

// At each threshold, detections with probability < threshold are discarded,
// then each image is matched and the counts are summed over images.
std::vector<SweepRow> pr_sweep(std::span<const std::vector<Detection>> preds_per_image,
                               std::span<const std::vector<GroundTruth>> gts_per_image,
                               std::span<const double> thresholds,
                               double iou_min = 0.5);

// Header: threshold,class,tp,fp,fn,precision,recall
std::string sweep_to_csv(std::span<const SweepRow> rows);

// Pixel confusion counts accumulated over any number of label-map pairs.
class PixelConfusion {
 public:
  explicit PixelConfusion(int num_classes);

  void add(const imagecore::LabelMap& pred, const imagecore::LabelMap& gt);

  int num_classes() const noexcept { return num_classes_; }
  std::size_t count(int gt_class, int pred_class) const;
  std::size_t intersection(int c) const;
  std::size_t union_count(int c) const;
  // nullopt when the class appears in neither prediction nor ground truth.
  std::optional<double> class_iou(int c) const;
  // Mean over classes that appear; ValidationError if none appear.
  double mean_iou() const;

 private:
  int num_classes_;
  std::vector<std::size_t> matrix_;  // [gt][pred]
};

// Mean of per-class pixel IoU over classes present in pred or gt.
double miou(const imagecore::LabelMap& pred, const imagecore::LabelMap& gt,
            int num_classes);

// Per-image annotation file:
//   {"image": str, "objects": [{"class": int, "box": [x0,y0,x1,y1], "prob": f|null}]}
struct AnnotatedObject {
  int class_id;
  BoundingBox box;
  std::optional<double> probability;  // absent for ground truth
};

struct ImageAnnotation {
  std::string image;
  std::vector<AnnotatedObject> objects;

  std::vector<GroundTruth> ground_truth() const;
  std::vector<Detection> detections() const;
};

std::string annotation_to_json(const ImageAnnotation& ann);
ImageAnnotation annotation_from_json(const std::string& text);
ImageAnnotation load_annotation(const std::filesystem::path& path);
void save_annotation(const ImageAnnotation& ann, const std::filesystem::path& path);

}  // namespace linesight::detmetrics
