#pragma once

#include <span>
#include <vector>

#include "signdet/box.hpp"

namespace signdet::geometry {

struct CornerBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return is_degenerate() ? 0.0 : width() * height(); }
  bool is_degenerate() const { return !(x2 > x1) || !(y2 > y1); }

  bool operator==(const CornerBox &) const = default;
};

CornerBox to_corners(const NormBox &box);

/// With `clamp`, corners are first clipped to [0, 1].
NormBox from_corners(const CornerBox &corners, bool clamp = false);

/// Intersection over union; 0 for disjoint or zero-area boxes.
double iou(const CornerBox &a, const CornerBox &b);
double iou(const NormBox &a, const NormBox &b);

/// IoU of two (width, height) pairs aligned on a shared center.
double iou_wh(double w1, double h1, double w2, double h2);

struct NmsOptions {
  double iou_threshold = 0.45;
  double confidence_threshold = 0.25;
  bool class_aware = true;
};

/// Greedy non-maximum suppression.
///
/// Detections below the confidence threshold or with zero area are dropped.
/// The rest are visited by confidence (descending, ties by input position)
/// and kept when their IoU with every kept detection (of the same class,
/// if class-aware) is at most the IoU threshold. Output is in visit order.
/// Throws std::invalid_argument if a threshold is outside [0, 1].
std::vector<Detection> nms(std::span<const Detection> detections,
                           const NmsOptions &options = {});

} // namespace signdet::geometry
