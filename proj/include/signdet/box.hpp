#pragma once

namespace signdet {

/// Center-format box with every field normalized by the image size.
struct NormBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  bool operator==(const NormBox &) const = default;
};

struct Annotation {
  int class_id = 0;
  NormBox box;

  bool operator==(const Annotation &) const = default;
};

/// One model output under evaluation.
struct Detection {
  int class_id = 0;
  NormBox box;
  double confidence = 0.0;

  bool operator==(const Detection &) const = default;
};

} // namespace signdet
