#include "linesight/detmetrics.hpp"
#include "linesight/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace linesight::detmetrics {

BoundingBox::BoundingBox(double x_min, double y_min, double x_max, double y_max)
    : x_min_(x_min), y_min_(y_min), x_max_(x_max), y_max_(y_max) {
  const bool finite = std::isfinite(x_min) && std::isfinite(y_min) &&
                      std::isfinite(x_max) && std::isfinite(y_max);
  if (!finite || !(x_min < x_max) || !(y_min < y_max)) {
    throw ValidationError("degenerate bounding box (" + std::to_string(x_min) +
                          "," + std::to_string(y_min) + "," +
                          std::to_string(x_max) + "," + std::to_string(y_max) +
                          ")");
  }
}

std::optional<BoundingBox> clip_box(const BoundingBox& box, double w, double h) {
  const double x0 = std::max(box.x_min(), 0.0);
  const double y0 = std::max(box.y_min(), 0.0);
  const double x1 = std::min(box.x_max(), w);
  const double y1 = std::min(box.y_max(), h);
  if (!(x0 < x1) || !(y0 < y1)) return std::nullopt;
  return BoundingBox(x0, y0, x1, y1);
}

Detection::Detection(BoundingBox b, int cls, double prob)
    : box(b), class_id(cls), probability(prob) {
  if (!(prob >= 0.0 && prob <= 1.0)) {
    throw ValidationError("detection probability outside [0,1]: " +
                          std::to_string(prob));
  }
}

double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double w = std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min());
  const double h = std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min());
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  if (inter == 0.0) return 0.0;
  if (a == b) return 1.0;
  return std::clamp(inter / (a.area() + b.area() - inter), 0.0, 1.0);
}

namespace {

// Probability descending, then x_min ascending; stable for full ties.
std::vector<std::size_t> greedy_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (dets[i].probability != dets[j].probability) {
      return dets[i].probability > dets[j].probability;
    }
    return dets[i].box.x_min() < dets[j].box.x_min();
  });
  return order;
}

}  // namespace

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold) {
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
    throw ValidationError("nms iou_threshold outside [0,1]");
  }
  std::vector<Detection> kept;
  for (std::size_t i : greedy_order(dets)) {
    const Detection& d = dets[i];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

ClassCounts MatchReport::counts(int class_id) const {
  auto it = counts_.find(class_id);
  return it == counts_.end() ? ClassCounts{} : it->second;
}

std::vector<int> MatchReport::classes() const {
  std::vector<int> out;
  for (const auto& [cls, _] : counts_) out.push_back(cls);
  return out;
}

MatchReport& MatchReport::operator+=(const MatchReport& other) {
  for (const auto& [cls, c] : other.counts_) counts_[cls] += c;
  return *this;
}

MatchReport match_detections(std::span<const Detection> preds,
                             std::span<const GroundTruth> gts, double iou_min) {
  if (!(iou_min > 0.0 && iou_min < 1.0)) {
    throw ValidationError("match iou_min must be in (0,1)");
  }
  MatchReport report;
  for (const auto& g : gts) report.touch(g.class_id);
  std::vector<bool> matched(gts.size(), false);
  for (std::size_t pi : greedy_order(preds)) {
    const Detection& p = preds[pi];
    report.touch(p.class_id);
    std::optional<std::size_t> best;
    double best_iou = iou_min;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (matched[gi] || gts[gi].class_id != p.class_id) continue;
      const double v = iou(p.box, gts[gi].box);
      // Strictly greater: IoU == iou_min is a false positive.
      if (v > best_iou) {
        best_iou = v;
        best = gi;
      }
    }
    if (best) {
      matched[*best] = true;
      report.add_tp(p.class_id);
    } else {
      report.add_fp(p.class_id);
    }
  }
  for (std::size_t gi = 0; gi < gts.size(); ++gi) {
    if (!matched[gi]) report.add_fn(gts[gi].class_id);
  }
  return report;
}

std::optional<double> precision(const ClassCounts& c) {
  if (c.tp + c.fp == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

std::optional<double> recall(const ClassCounts& c) {
  if (c.tp + c.fn == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

}  // namespace linesight::detmetrics
