#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "signdet/box.hpp"

namespace signdet::detmetrics {

/// Ground truth and detections of one image, in the same normalized frame.
struct ImageSample {
  std::string id;
  std::vector<Annotation> truths;
  std::vector<Detection> detections;
};

using EvalSet = std::vector<ImageSample>;

struct MatchResult {
  std::vector<int> detection_match; // matched truth index, -1 for a false positive
  std::vector<int> truth_match;     // matching detection index, -1 for a miss
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  bool is_true_positive(std::size_t detection) const {
    return detection_match[detection] >= 0;
  }
};

/// Greedy class-segregated matching: within each class, detections are taken
/// by descending confidence (ties by input order) and claim the unmatched
/// truth with the highest IoU, provided that IoU is positive and at least
/// `iou_threshold`. Everything else is a false positive.
MatchResult match(std::span<const Detection> detections,
                  std::span<const Annotation> truths, double iou_threshold);

/// A ratio with its zero-denominator flag; undefined ratios have value 0.
struct Rate {
  double value = 0.0;
  bool defined = false;
};

Rate precision(std::size_t tp, std::size_t fp);
Rate recall(std::size_t tp, std::size_t fn);
Rate f1(double precision, double recall);

struct PRPoint {
  double confidence = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
};

/// Operating points of one class, one per distinct confidence, highest first.
/// Each point counts every detection at or above its confidence.
struct PRCurve {
  int class_id = 0;
  std::size_t truth_count = 0;
  std::vector<PRPoint> points;
};

PRCurve pr_curve(const EvalSet &set, int class_id, double iou_threshold);

enum class ApMethod { AllPoint, ElevenPoint };

/// AllPoint integrates the right-max precision envelope over recall;
/// ElevenPoint averages it at recall 0, 0.1, ..., 1.
double average_precision(const PRCurve &curve, ApMethod method = ApMethod::AllPoint);

struct ClassAp {
  int class_id = 0;
  std::size_t truth_count = 0;
  double ap = 0.0;
};

struct MapResult {
  std::vector<ClassAp> classes; // only classes with at least one truth
  double map = 0.0;
  bool defined = false;         // false when no class has a truth
};

MapResult mean_average_precision(const EvalSet &set, double iou_threshold,
                                 ApMethod method = ApMethod::AllPoint,
                                 unsigned jobs = 1);
MapResult map_at_50(const EvalSet &set, unsigned jobs = 1);

struct ClassCounts {
  int class_id = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  Rate precision;
  Rate recall;
  Rate f1;
};

/// Per-class counts after dropping detections below `confidence_threshold`.
/// Covers every class seen in truths or detections, in ascending order.
std::vector<ClassCounts> class_counts(const EvalSet &set, double iou_threshold,
                                      double confidence_threshold, unsigned jobs = 1);

struct F1Curve {
  std::vector<double> thresholds;
  std::vector<int> classes;                  // classes with at least one truth
  std::vector<std::vector<double>> class_f1; // [class][threshold]
  std::vector<double> mean_f1;               // macro mean over `classes`
  std::size_t best_index = 0;                // first maximum of mean_f1
  double best_threshold() const { return thresholds.at(best_index); }
  double best_f1() const { return mean_f1.at(best_index); }
};

/// Mean F1 at thresholds i/steps for i = 0..steps; a detection survives a
/// threshold when its confidence is at least that threshold.
F1Curve f1_confidence_curve(const EvalSet &set, double iou_threshold,
                            std::size_t steps = 1000, unsigned jobs = 1);

/// (C+1)x(C+1) counts, rows = truth class, columns = detected class, index C
/// is background. Matching ignores class: candidate pairs with IoU at least
/// the threshold are taken greedily by descending IoU.
class ConfusionMatrix {
public:
  explicit ConfusionMatrix(int class_count);

  int class_count() const { return classes_; }
  int background() const { return classes_; }
  std::size_t at(int truth_class, int detected_class) const;
  std::size_t &at(int truth_class, int detected_class);
  std::size_t total() const;

private:
  int classes_;
  std::vector<std::size_t> cells_;
};

ConfusionMatrix confusion_matrix(const EvalSet &set, int class_count,
                                 double confidence_threshold = 0.25,
                                 double iou_threshold = 0.45);

struct ClassReport {
  int class_id = 0;
  std::string name;
  std::size_t truth_count = 0;
  double ap = 0.0;
  Rate precision;
  Rate recall;
  Rate f1;
};

/// Everything the `eval` command reports.
struct EvaluationReport {
  double iou_threshold = 0.5;
  double map = 0.0;
  bool map_defined = false;
  double best_threshold = 0.0;
  double best_mean_f1 = 0.0;
  Rate mean_precision;
  Rate mean_recall;
  std::vector<ClassReport> classes;
};

struct EvaluationOptions {
  double iou_threshold = 0.5;
  std::size_t f1_steps = 1000;
  ApMethod ap_method = ApMethod::AllPoint;
  unsigned jobs = 1;
  std::vector<std::string> class_names; // optional labels for reports
};

EvaluationReport evaluate(const EvalSet &set, const EvaluationOptions &options = {});

std::string to_csv(const EvaluationReport &report);
std::string to_json(const EvaluationReport &report);
std::string to_text(const EvaluationReport &report);

std::string to_csv(const F1Curve &curve);
std::string to_json(const F1Curve &curve);
std::string to_text(const F1Curve &curve);

std::string to_csv(const ConfusionMatrix &matrix, const std::vector<std::string> &names = {});
std::string to_json(const ConfusionMatrix &matrix, const std::vector<std::string> &names = {});
std::string to_text(const ConfusionMatrix &matrix, const std::vector<std::string> &names = {});

} // namespace signdet::detmetrics
