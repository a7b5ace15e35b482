#include "signdet/yolo_loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "signdet/geometry.hpp"
#include "signdet/rng.hpp"

namespace signdet::yolo {

void LossConfig::validate() const {
  if (grid < 1 || boxes < 1 || classes < 1)
    throw std::invalid_argument("loss config: S, B and C must be at least 1");
  if (!(lambda_coord >= 0.0) || !(lambda_noobj >= 0.0))
    throw std::invalid_argument("loss config: weights must be non-negative");
  if (!(sqrt_epsilon > 0.0))
    throw std::invalid_argument("loss config: sqrt epsilon must be positive");
}

GridPrediction::GridPrediction(const LossConfig &config)
    : GridPrediction(config.grid, config.boxes, config.classes) {}

GridPrediction::GridPrediction(int grid, int boxes, int classes)
    : grid_(grid), boxes_(boxes), classes_(classes) {
  if (grid < 1 || boxes < 1 || classes < 1)
    throw std::invalid_argument("grid prediction: dimensions must be positive");
  values_.assign(cells() * static_cast<std::size_t>(boxes) * 5 +
                     cells() * static_cast<std::size_t>(classes),
                 0.0);
}

std::size_t GridPrediction::box_offset(std::size_t cell, int predictor, Field field) const {
  if (cell >= cells() || predictor < 0 || predictor >= boxes_)
    throw std::out_of_range("grid prediction index out of range");
  return (cell * static_cast<std::size_t>(boxes_) + static_cast<std::size_t>(predictor)) * 5 +
         static_cast<std::size_t>(field);
}

std::size_t GridPrediction::class_offset(std::size_t cell, int class_id) const {
  if (cell >= cells() || class_id < 0 || class_id >= classes_)
    throw std::out_of_range("grid prediction index out of range");
  return cells() * static_cast<std::size_t>(boxes_) * 5 +
         cell * static_cast<std::size_t>(classes_) + static_cast<std::size_t>(class_id);
}

double &GridPrediction::at(std::size_t cell, int predictor, Field field) {
  return values_[box_offset(cell, predictor, field)];
}

double GridPrediction::at(std::size_t cell, int predictor, Field field) const {
  return values_[box_offset(cell, predictor, field)];
}

double &GridPrediction::class_score(std::size_t cell, int class_id) {
  return values_[class_offset(cell, class_id)];
}

double GridPrediction::class_score(std::size_t cell, int class_id) const {
  return values_[class_offset(cell, class_id)];
}

NormBox GridPrediction::image_box(std::size_t cell, int predictor) const {
  auto row = static_cast<double>(cell / static_cast<std::size_t>(grid_));
  auto col = static_cast<double>(cell % static_cast<std::size_t>(grid_));
  double s = grid_;
  return {(col + at(cell, predictor, Field::X)) / s,
          (row + at(cell, predictor, Field::Y)) / s, at(cell, predictor, Field::W),
          at(cell, predictor, Field::H)};
}

bool GridPrediction::same_shape(const LossConfig &config) const {
  return grid_ == config.grid && boxes_ == config.boxes && classes_ == config.classes;
}

GridTarget::GridTarget(int grid, int boxes, int classes)
    : grid_(grid), boxes_(boxes), classes_(classes) {
  if (grid < 1 || boxes < 1 || classes < 1)
    throw std::invalid_argument("grid target: dimensions must be positive");
  cells_.resize(static_cast<std::size_t>(grid) * grid);
}

double GridTarget::class_target(std::size_t cell, int class_id) const {
  const auto &c = cells_.at(cell);
  return c.has_object && c.class_id == class_id ? 1.0 : 0.0;
}

bool GridTarget::same_shape(const LossConfig &config) const {
  return grid_ == config.grid && boxes_ == config.boxes && classes_ == config.classes;
}

int grid_cell_index(double center, int grid) {
  if (!(center >= 0.0 && center <= 1.0))
    throw std::invalid_argument("center outside [0, 1]");
  auto k = static_cast<int>(std::floor(center * grid));
  return std::min(k, grid - 1);
}

GridTarget assign_targets(std::span<const Annotation> annotations,
                          const GridPrediction &prediction, const LossConfig &config,
                          std::vector<std::string> *warnings) {
  config.validate();
  if (!prediction.same_shape(config))
    throw std::invalid_argument("assign_targets: prediction shape does not match config");
  const int s = config.grid;
  GridTarget target(s, config.boxes, config.classes);
  std::vector<const Annotation *> owner(target.cells(), nullptr);

  for (const auto &a : annotations) {
    if (a.class_id < 0 || a.class_id >= config.classes)
      throw std::invalid_argument("assign_targets: class " + std::to_string(a.class_id) +
                                  " outside [0, C)");
    int col = grid_cell_index(a.box.cx, s);
    int row = grid_cell_index(a.box.cy, s);
    auto cell = static_cast<std::size_t>(row * s + col);
    if (owner[cell]) {
      if (warnings)
        warnings->push_back("cell (" + std::to_string(row) + ", " + std::to_string(col) +
                            ") holds several objects; keeping the largest");
      if (a.box.area() <= owner[cell]->box.area())
        continue;
    }
    owner[cell] = &a;
  }

  for (std::size_t cell = 0; cell < owner.size(); ++cell) {
    const Annotation *a = owner[cell];
    if (!a)
      continue;
    auto row = static_cast<double>(cell / static_cast<std::size_t>(s));
    auto col = static_cast<double>(cell % static_cast<std::size_t>(s));
    int best = 0;
    double best_iou = -1.0;
    for (int j = 0; j < config.boxes; ++j) {
      double v = geometry::iou(prediction.image_box(cell, j), a->box);
      if (v > best_iou) {
        best_iou = v;
        best = j;
      }
    }
    CellTarget &t = target.cell(cell);
    t.has_object = true;
    t.responsible = best;
    t.x = a->box.cx * s - col;
    t.y = a->box.cy * s - row;
    t.w = a->box.w;
    t.h = a->box.h;
    t.confidence = config.confidence_target == ConfidenceTarget::Iou ? best_iou : 1.0;
    t.class_id = a->class_id;
  }
  return target;
}

namespace {

void check_inputs(const GridPrediction &pred, const GridTarget &target,
                  const LossConfig &config) {
  config.validate();
  if (!pred.same_shape(config) || !target.same_shape(config))
    throw std::invalid_argument("loss: prediction or target shape does not match config");
  for (double v : pred.values())
    if (!std::isfinite(v))
      throw std::invalid_argument("loss: prediction contains a non-finite value");
  for (std::size_t cell = 0; cell < pred.cells(); ++cell) {
    for (int j = 0; j < config.boxes; ++j)
      if (pred.at(cell, j, Field::W) < 0.0 || pred.at(cell, j, Field::H) < 0.0)
        throw std::invalid_argument("loss: negative predicted width or height");
    const auto &t = target.cell(cell);
    if (t.has_object && (t.w < 0.0 || t.h < 0.0))
      throw std::invalid_argument("loss: negative target width or height");
    if (t.has_object && (t.responsible < 0 || t.responsible >= config.boxes))
      throw std::invalid_argument("loss: responsible predictor out of range");
  }
}

bool class_cell_counts(const GridTarget &target, std::size_t cell, const LossConfig &config) {
  return config.class_scope == ClassLossScope::AllCells || target.cell(cell).has_object;
}

} // namespace

LossBreakdown loss(const GridPrediction &pred, const GridTarget &target,
                   const LossConfig &config) {
  check_inputs(pred, target, config);
  const double eps = config.sqrt_epsilon;
  LossBreakdown out;
  for (std::size_t cell = 0; cell < pred.cells(); ++cell) {
    const CellTarget &t = target.cell(cell);
    for (int j = 0; j < config.boxes; ++j) {
      double c = pred.at(cell, j, Field::Confidence);
      if (t.has_object && j == t.responsible) {
        double dx = pred.at(cell, j, Field::X) - t.x;
        double dy = pred.at(cell, j, Field::Y) - t.y;
        double dw = std::sqrt(pred.at(cell, j, Field::W) + eps) - std::sqrt(t.w + eps);
        double dh = std::sqrt(pred.at(cell, j, Field::H) + eps) - std::sqrt(t.h + eps);
        out.coord_xy += dx * dx + dy * dy;
        out.coord_wh += dw * dw + dh * dh;
        out.obj_conf += (c - t.confidence) * (c - t.confidence);
      } else {
        out.noobj_conf += c * c;
      }
    }
    if (class_cell_counts(target, cell, config)) {
      for (int k = 0; k < config.classes; ++k) {
        double d = pred.class_score(cell, k) - target.class_target(cell, k);
        out.class_term += d * d;
      }
    }
  }
  out.coord_xy *= config.lambda_coord;
  out.coord_wh *= config.lambda_coord;
  out.noobj_conf *= config.lambda_noobj;
  out.total = out.coord_xy + out.coord_wh + out.obj_conf + out.noobj_conf + out.class_term;
  return out;
}

GridPrediction loss_gradient(const GridPrediction &pred, const GridTarget &target,
                             const LossConfig &config) {
  check_inputs(pred, target, config);
  const double eps = config.sqrt_epsilon;
  const double lc = config.lambda_coord;
  GridPrediction grad(config);
  for (std::size_t cell = 0; cell < pred.cells(); ++cell) {
    const CellTarget &t = target.cell(cell);
    for (int j = 0; j < config.boxes; ++j) {
      double c = pred.at(cell, j, Field::Confidence);
      if (t.has_object && j == t.responsible) {
        grad.at(cell, j, Field::X) = 2.0 * lc * (pred.at(cell, j, Field::X) - t.x);
        grad.at(cell, j, Field::Y) = 2.0 * lc * (pred.at(cell, j, Field::Y) - t.y);
        // d/dv (sqrt(v + e) - s)^2 = (sqrt(v + e) - s) / sqrt(v + e)
        double rw = std::sqrt(pred.at(cell, j, Field::W) + eps);
        double rh = std::sqrt(pred.at(cell, j, Field::H) + eps);
        grad.at(cell, j, Field::W) = lc * (rw - std::sqrt(t.w + eps)) / rw;
        grad.at(cell, j, Field::H) = lc * (rh - std::sqrt(t.h + eps)) / rh;
        grad.at(cell, j, Field::Confidence) = 2.0 * (c - t.confidence);
      } else {
        grad.at(cell, j, Field::Confidence) = 2.0 * config.lambda_noobj * c;
      }
    }
    if (class_cell_counts(target, cell, config)) {
      for (int k = 0; k < config.classes; ++k)
        grad.class_score(cell, k) =
            2.0 * (pred.class_score(cell, k) - target.class_target(cell, k));
    }
  }
  return grad;
}

double gradient_rel_error(double analytic, double numeric) {
  double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / scale;
}

GradientCheck check_gradient(const GridPrediction &prediction, const GridTarget &target,
                             const LossConfig &config, double step) {
  if (!(step > 0.0))
    throw std::invalid_argument("gradient check: step must be positive");
  auto analytic = loss_gradient(prediction, target, config);
  GridPrediction probe = prediction;
  auto values = probe.values();
  GradientCheck report;
  report.parameters = values.size();
  for (std::size_t i = 0; i < values.size(); ++i) {
    double saved = values[i];
    values[i] = saved + step;
    double plus = loss(probe, target, config).total;
    values[i] = saved - step;
    double minus = loss(probe, target, config).total;
    values[i] = saved;
    double numeric = (plus - minus) / (2.0 * step);
    double a = analytic.values()[i];
    double abs_err = std::abs(a - numeric);
    double rel_err = gradient_rel_error(a, numeric);
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel_err > report.max_rel_error) {
      report.max_rel_error = rel_err;
      report.worst_index = i;
    }
  }
  return report;
}

RandomInstance random_instance(const LossConfig &config, std::uint64_t seed,
                               double min_size) {
  config.validate();
  SeededRng rng(seed);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * rng.unit(); };
  GridPrediction pred(config);
  for (std::size_t cell = 0; cell < pred.cells(); ++cell) {
    for (int j = 0; j < config.boxes; ++j) {
      pred.at(cell, j, Field::X) = uniform(0.0, 1.0);
      pred.at(cell, j, Field::Y) = uniform(0.0, 1.0);
      pred.at(cell, j, Field::W) = uniform(min_size, 1.0);
      pred.at(cell, j, Field::H) = uniform(min_size, 1.0);
      pred.at(cell, j, Field::Confidence) = uniform(0.0, 1.0);
    }
    for (int k = 0; k < config.classes; ++k)
      pred.class_score(cell, k) = uniform(0.0, 1.0);
  }

  std::vector<Annotation> annotations;
  const int s = config.grid;
  for (std::size_t cell = 0; cell < pred.cells(); ++cell) {
    if (rng.unit() >= 0.5)
      continue;
    auto row = static_cast<double>(cell / static_cast<std::size_t>(s));
    auto col = static_cast<double>(cell % static_cast<std::size_t>(s));
    // Keep the center strictly inside the cell.
    double cx = (col + uniform(0.05, 0.95)) / s;
    double cy = (row + uniform(0.05, 0.95)) / s;
    double w = uniform(min_size, 1.0);
    double h = uniform(min_size, 1.0);
    auto cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(config.classes)));
    annotations.push_back({cls, {cx, cy, w, h}});
  }
  auto target = assign_targets(annotations, pred, config);
  return {std::move(pred), std::move(annotations), std::move(target)};
}

} // namespace signdet::yolo
