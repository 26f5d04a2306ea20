#include "linesight/detmetrics.hpp"
#include "linesight/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace linesight::detmetrics {

std::string format_ratio(std::optional<double> value) {
  if (!value) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *value);
  return buf;
}

std::vector<SweepRow> pr_sweep(std::span<const std::vector<Detection>> preds_per_image,
                               std::span<const std::vector<GroundTruth>> gts_per_image,
                               std::span<const double> thresholds, double iou_min) {
  if (thresholds.empty()) throw ValidationError("pr_sweep needs at least one threshold");
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw ValidationError("pr_sweep thresholds must be sorted ascending");
  }
  if (preds_per_image.size() != gts_per_image.size()) {
    throw DimensionError("pr_sweep: " + std::to_string(preds_per_image.size()) +
                         " prediction lists vs " +
                         std::to_string(gts_per_image.size()) + " ground-truth lists");
  }
  std::vector<SweepRow> rows;
  rows.reserve(thresholds.size());
  for (double t : thresholds) {
    SweepRow row{t, {}, {}, {}};
    for (std::size_t i = 0; i < preds_per_image.size(); ++i) {
      std::vector<Detection> kept;
      for (const auto& d : preds_per_image[i]) {
        // Every predicted class is reported even if all its detections drop.
        row.report.touch(d.class_id);
        if (d.probability >= t) kept.push_back(d);
      }
      row.report += match_detections(kept, gts_per_image[i], iou_min);
    }
    for (const auto& [cls, c] : row.report.all()) {
      row.precision[cls] = precision(c);
      row.recall[cls] = recall(c);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_to_csv(std::span<const SweepRow> rows) {
  std::ostringstream os;
  os << "threshold,class,tp,fp,fn,precision,recall\n";
  for (const auto& row : rows) {
    for (const auto& [cls, c] : row.report.all()) {
      char t[32];
      std::snprintf(t, sizeof t, "%.4f", row.threshold);
      os << t << ',' << cls << ',' << c.tp << ',' << c.fp << ',' << c.fn << ','
         << format_ratio(precision(c)) << ',' << format_ratio(recall(c)) << '\n';
    }
  }
  return os.str();
}

PixelConfusion::PixelConfusion(int num_classes)
    : num_classes_(num_classes),
      matrix_(static_cast<std::size_t>(std::max(num_classes, 0)) *
                  static_cast<std::size_t>(std::max(num_classes, 0)),
              0) {
  if (num_classes < 1) throw ValidationError("num_classes must be >= 1");
}

void PixelConfusion::add(const imagecore::LabelMap& pred, const imagecore::LabelMap& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw DimensionError("label map shape mismatch: pred " +
                         std::to_string(pred.height()) + "x" +
                         std::to_string(pred.width()) + " vs gt " +
                         std::to_string(gt.height()) + "x" + std::to_string(gt.width()));
  }
  const auto p = pred.labels();
  const auto g = gt.labels();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0 || p[i] >= num_classes_ || g[i] < 0 || g[i] >= num_classes_) {
      throw ValidationError("label outside [0," + std::to_string(num_classes_) +
                            ") at pixel " + std::to_string(i));
    }
    ++matrix_[static_cast<std::size_t>(g[i]) * num_classes_ + p[i]];
  }
}

std::size_t PixelConfusion::count(int gt_class, int pred_class) const {
  return matrix_.at(static_cast<std::size_t>(gt_class) * num_classes_ + pred_class);
}

std::size_t PixelConfusion::intersection(int c) const { return count(c, c); }

std::size_t PixelConfusion::union_count(int c) const {
  std::size_t row = 0, col = 0;
  for (int k = 0; k < num_classes_; ++k) {
    row += count(c, k);
    col += count(k, c);
  }
  return row + col - count(c, c);
}

std::optional<double> PixelConfusion::class_iou(int c) const {
  const std::size_t u = union_count(c);
  if (u == 0) return std::nullopt;
  return static_cast<double>(intersection(c)) / static_cast<double>(u);
}

double PixelConfusion::mean_iou() const {
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes_; ++c) {
    if (auto v = class_iou(c)) {
      sum += *v;
      ++present;
    }
  }
  if (present == 0) throw ValidationError("mean IoU over zero pixels is undefined");
  return sum / present;
}

double miou(const imagecore::LabelMap& pred, const imagecore::LabelMap& gt,
            int num_classes) {
  PixelConfusion conf(num_classes);
  conf.add(pred, gt);
  return conf.mean_iou();
}

}  // namespace linesight::detmetrics
