#include "signdet/geometry.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace signdet::geometry {

CornerBox to_corners(const NormBox &box) {
  return {box.cx - box.w / 2.0, box.cy - box.h / 2.0, box.cx + box.w / 2.0,
          box.cy + box.h / 2.0};
}

NormBox from_corners(const CornerBox &corners, bool clamp) {
  CornerBox c = corners;
  if (clamp) {
    c.x1 = std::clamp(c.x1, 0.0, 1.0);
    c.y1 = std::clamp(c.y1, 0.0, 1.0);
    c.x2 = std::clamp(c.x2, 0.0, 1.0);
    c.y2 = std::clamp(c.y2, 0.0, 1.0);
  }
  return {(c.x1 + c.x2) / 2.0, (c.y1 + c.y2) / 2.0, c.x2 - c.x1, c.y2 - c.y1};
}

double iou(const CornerBox &a, const CornerBox &b) {
  if (a.is_degenerate() || b.is_degenerate())
    return 0.0;
  double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0)
    return 0.0;
  double inter = iw * ih;
  double uni = a.area() + b.area() - inter;
  if (uni <= 0.0)
    return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou(const NormBox &a, const NormBox &b) {
  return iou(to_corners(a), to_corners(b));
}

double iou_wh(double w1, double h1, double w2, double h2) {
  if (!(w1 > 0.0 && h1 > 0.0 && w2 > 0.0 && h2 > 0.0))
    return 0.0;
  double inter = std::min(w1, w2) * std::min(h1, h2);
  return inter / (w1 * h1 + w2 * h2 - inter);
}

std::vector<Detection> nms(std::span<const Detection> detections,
                           const NmsOptions &options) {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(options.iou_threshold) || !in_unit(options.confidence_threshold))
    throw std::invalid_argument("nms thresholds must lie in [0, 1]");

  std::vector<std::size_t> order;
  std::vector<CornerBox> corners(detections.size());
  for (std::size_t i = 0; i < detections.size(); ++i) {
    corners[i] = to_corners(detections[i].box);
    if (detections[i].confidence >= options.confidence_threshold &&
        !corners[i].is_degenerate())
      order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].confidence > detections[b].confidence;
  });

  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool keep = std::all_of(kept.begin(), kept.end(), [&](std::size_t k) {
      if (options.class_aware && detections[k].class_id != detections[i].class_id)
        return true;
      return iou(corners[i], corners[k]) <= options.iou_threshold;
    });
    if (keep)
      kept.push_back(i);
  }

  std::vector<Detection> out;
  out.reserve(kept.size());
  for (std::size_t k : kept)
    out.push_back(detections[k]);
  return out;
}

} // namespace signdet::geometry
