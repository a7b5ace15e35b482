#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "signdet/box.hpp"

namespace signdet::yolo {

enum class ClassLossScope { ObjectCells, AllCells };
enum class ConfidenceTarget { Iou, One };

struct LossConfig {
  int grid = 7;    // cells per side
  int boxes = 2;   // predictors per cell
  int classes = 12;
  double lambda_coord = 5.0;
  double lambda_noobj = 0.5;
  double sqrt_epsilon = 1e-8;
  ClassLossScope class_scope = ClassLossScope::ObjectCells;
  ConfidenceTarget confidence_target = ConfidenceTarget::Iou;

  /// Throws std::invalid_argument on a non-positive dimension, a negative
  /// weight or a non-positive epsilon.
  void validate() const;
  std::size_t cells() const { return static_cast<std::size_t>(grid) * grid; }
};

enum class Field { X = 0, Y = 1, W = 2, H = 3, Confidence = 4 };

/// Raw network output for one image laid out as a flat vector: every cell's
/// B predictors of (x, y, w, h, C) first, then every cell's C class scores.
/// Cells are row-major; x and y are offsets inside the cell, w and h are
/// fractions of the image.
class GridPrediction {
public:
  explicit GridPrediction(const LossConfig &config);
  GridPrediction(int grid, int boxes, int classes);

  int grid() const { return grid_; }
  int boxes() const { return boxes_; }
  int classes() const { return classes_; }
  std::size_t cells() const { return static_cast<std::size_t>(grid_) * grid_; }

  double &at(std::size_t cell, int predictor, Field field);
  double at(std::size_t cell, int predictor, Field field) const;
  double &class_score(std::size_t cell, int class_id);
  double class_score(std::size_t cell, int class_id) const;

  /// Predictor box in image coordinates.
  NormBox image_box(std::size_t cell, int predictor) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool same_shape(const LossConfig &config) const;

private:
  std::size_t box_offset(std::size_t cell, int predictor, Field field) const;
  std::size_t class_offset(std::size_t cell, int class_id) const;

  int grid_;
  int boxes_;
  int classes_;
  std::vector<double> values_;
};

struct CellTarget {
  bool has_object = false;
  int responsible = -1; // predictor index j*, defined iff has_object
  double x = 0.0;       // offset inside the cell
  double y = 0.0;
  double w = 0.0;       // fraction of the image
  double h = 0.0;
  double confidence = 0.0;
  int class_id = -1;
};

class GridTarget {
public:
  GridTarget(int grid, int boxes, int classes);

  int grid() const { return grid_; }
  int boxes() const { return boxes_; }
  int classes() const { return classes_; }
  std::size_t cells() const { return cells_.size(); }

  CellTarget &cell(std::size_t index) { return cells_.at(index); }
  const CellTarget &cell(std::size_t index) const { return cells_.at(index); }

  /// One-hot class target; all zeros in cells without an object.
  double class_target(std::size_t cell, int class_id) const;

  bool same_shape(const LossConfig &config) const;

private:
  int grid_;
  int boxes_;
  int classes_;
  std::vector<CellTarget> cells_;
};

struct LossBreakdown {
  double coord_xy = 0.0;
  double coord_wh = 0.0;
  double obj_conf = 0.0;
  double noobj_conf = 0.0;
  double class_term = 0.0;
  double total = 0.0;
};

/// Cell of a normalized center using half-open intervals [k/S, (k+1)/S);
/// a center of exactly 1 falls into the last cell.
int grid_cell_index(double center, int grid);

/// Maps each annotation to the cell holding its center and picks the
/// predictor with the highest IoU against it (ties to the lower index).
/// When several annotations share a cell the largest box wins and a warning
/// is recorded.
GridTarget assign_targets(std::span<const Annotation> annotations,
                          const GridPrediction &prediction, const LossConfig &config,
                          std::vector<std::string> *warnings = nullptr);

/// Sum-squared grid loss:
///   lambda_coord * sum_obj [(x - x^)^2 + (y - y^)^2]
/// + lambda_coord * sum_obj [(sqrt w - sqrt w^)^2 + (sqrt h - sqrt h^)^2]
/// + sum_obj (C - C^)^2 + lambda_noobj * sum_noobj C^2
/// + sum_cells ||p - p^||^2
/// "obj" is the responsible predictor of an object cell, "noobj" every other
/// predictor, sqrt v means sqrt(v + sqrt_epsilon), and the class sum runs
/// over the cells chosen by class_scope.
LossBreakdown loss(const GridPrediction &prediction, const GridTarget &target,
                   const LossConfig &config);

/// d loss / d prediction, with the confidence target held constant.
GridPrediction loss_gradient(const GridPrediction &prediction, const GridTarget &target,
                             const LossConfig &config);

struct GradientCheck {
  std::size_t parameters = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

/// Relative error used throughout: |a - n| / max(1, |a|, |n|).
double gradient_rel_error(double analytic, double numeric);

/// Central differences of loss() against loss_gradient() over every value.
GradientCheck check_gradient(const GridPrediction &prediction, const GridTarget &target,
                             const LossConfig &config, double step = 1e-4);

struct RandomInstance {
  GridPrediction prediction;
  std::vector<Annotation> annotations;
  GridTarget target;
};

/// Predictions with w, h in [min_size, 1] and up to one annotation per cell.
RandomInstance random_instance(const LossConfig &config, std::uint64_t seed,
                               double min_size = 0.05);

} // namespace signdet::yolo
