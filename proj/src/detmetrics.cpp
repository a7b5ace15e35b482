#include "signdet/detmetrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "json.hpp"

#include "parallel.hpp"
#include "signdet/geometry.hpp"
#include "text_util.hpp"

namespace signdet::detmetrics {

namespace {

using geometry::CornerBox;

struct Ranked {
  double confidence;
  bool tp;
  std::size_t image;
  std::size_t index;
};

std::vector<MatchResult> match_all(const EvalSet &set, double iou_threshold,
                                   unsigned jobs) {
  std::vector<MatchResult> out(set.size());
  detail::parallel_for(set.size(), jobs, [&](std::size_t i) {
    out[i] = match(set[i].detections, set[i].truths, iou_threshold);
  });
  return out;
}

// Detections of one class across the set, by descending confidence with
// ties broken by (image, position) so the ranking is total.
std::vector<Ranked> rank_class(const EvalSet &set,
                               const std::vector<MatchResult> &matches,
                               int class_id) {
  std::vector<Ranked> ranked;
  for (std::size_t img = 0; img < set.size(); ++img) {
    const auto &dets = set[img].detections;
    for (std::size_t d = 0; d < dets.size(); ++d)
      if (dets[d].class_id == class_id)
        ranked.push_back({dets[d].confidence, matches[img].is_true_positive(d), img, d});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked &a, const Ranked &b) {
    if (a.confidence != b.confidence)
      return a.confidence > b.confidence;
    if (a.image != b.image)
      return a.image < b.image;
    return a.index < b.index;
  });
  return ranked;
}

std::map<int, std::size_t> truth_counts(const EvalSet &set) {
  std::map<int, std::size_t> counts;
  for (const auto &img : set)
    for (const auto &t : img.truths)
      ++counts[t.class_id];
  return counts;
}

PRCurve curve_from_ranking(const std::vector<Ranked> &ranked, int class_id,
                           std::size_t truths) {
  PRCurve curve;
  curve.class_id = class_id;
  curve.truth_count = truths;
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    (ranked[i].tp ? tp : fp) += 1;
    bool group_end = i + 1 == ranked.size() ||
                     ranked[i + 1].confidence != ranked[i].confidence;
    if (!group_end)
      continue;
    curve.points.push_back({ranked[i].confidence, precision(tp, fp).value,
                            recall(tp, truths - std::min(tp, truths)).value, tp, fp});
  }
  return curve;
}

// Counts of detections with confidence >= threshold, using a ranking sorted
// by descending confidence.
std::pair<std::size_t, std::size_t> counts_at(const std::vector<Ranked> &ranked,
                                              const std::vector<std::size_t> &cum_tp,
                                              double threshold) {
  auto it = std::partition_point(ranked.begin(), ranked.end(), [&](const Ranked &r) {
    return r.confidence >= threshold;
  });
  std::size_t n = static_cast<std::size_t>(it - ranked.begin());
  std::size_t tp = n ? cum_tp[n - 1] : 0;
  return {tp, n - tp};
}

std::vector<std::size_t> cumulative_tp(const std::vector<Ranked> &ranked) {
  std::vector<std::size_t> out(ranked.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    tp += ranked[i].tp ? 1 : 0;
    out[i] = tp;
  }
  return out;
}

std::string class_label(const std::vector<std::string> &names, int class_id) {
  if (class_id >= 0 && static_cast<std::size_t>(class_id) < names.size())
    return names[static_cast<std::size_t>(class_id)];
  return std::to_string(class_id);
}

nlohmann::json rate_json(const Rate &r) {
  return r.defined ? nlohmann::json(r.value) : nlohmann::json(nullptr);
}

std::string rate_text(const Rate &r, int decimals) {
  return r.defined ? detail::fixed(r.value, decimals) : "-";
}

} // namespace

MatchResult match(std::span<const Detection> detections,
                  std::span<const Annotation> truths, double iou_threshold) {
  MatchResult result;
  result.detection_match.assign(detections.size(), -1);
  result.truth_match.assign(truths.size(), -1);

  std::vector<CornerBox> truth_corners(truths.size());
  for (std::size_t t = 0; t < truths.size(); ++t)
    truth_corners[t] = geometry::to_corners(truths[t].box);

  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].confidence > detections[b].confidence;
  });

  for (std::size_t d : order) {
    CornerBox dc = geometry::to_corners(detections[d].box);
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (result.truth_match[t] >= 0 || truths[t].class_id != detections[d].class_id)
        continue;
      double v = geometry::iou(dc, truth_corners[t]);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(t);
      }
    }
    if (best >= 0 && best_iou >= iou_threshold) {
      result.detection_match[d] = best;
      result.truth_match[static_cast<std::size_t>(best)] = static_cast<int>(d);
      ++result.tp;
    } else {
      ++result.fp;
    }
  }
  result.fn = truths.size() - result.tp;
  return result;
}

Rate precision(std::size_t tp, std::size_t fp) {
  if (tp + fp == 0)
    return {};
  return {static_cast<double>(tp) / static_cast<double>(tp + fp), true};
}

Rate recall(std::size_t tp, std::size_t fn) {
  if (tp + fn == 0)
    return {};
  return {static_cast<double>(tp) / static_cast<double>(tp + fn), true};
}

Rate f1(double p, double r) {
  if (p + r == 0.0)
    return {};
  return {2.0 * p * r / (p + r), true};
}

PRCurve pr_curve(const EvalSet &set, int class_id, double iou_threshold) {
  auto matches = match_all(set, iou_threshold, 1);
  auto counts = truth_counts(set);
  auto it = counts.find(class_id);
  return curve_from_ranking(rank_class(set, matches, class_id), class_id,
                            it == counts.end() ? 0 : it->second);
}

double average_precision(const PRCurve &curve, ApMethod method) {
  if (curve.truth_count == 0 || curve.points.empty())
    return 0.0;
  const auto &pts = curve.points;
  // Right-max envelope: best precision at this recall or any larger one.
  std::vector<double> envelope(pts.size());
  double best = 0.0;
  for (std::size_t i = pts.size(); i-- > 0;) {
    best = std::max(best, pts[i].precision);
    envelope[i] = best;
  }
  if (method == ApMethod::AllPoint) {
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      ap += (pts[i].recall - prev_recall) * envelope[i];
      prev_recall = pts[i].recall;
    }
    return ap;
  }
  double sum = 0.0;
  for (int k = 0; k <= 10; ++k) {
    double r = k / 10.0;
    auto it = std::find_if(pts.begin(), pts.end(),
                           [&](const PRPoint &p) { return p.recall >= r; });
    if (it != pts.end())
      sum += envelope[static_cast<std::size_t>(it - pts.begin())];
  }
  return sum / 11.0;
}

MapResult mean_average_precision(const EvalSet &set, double iou_threshold,
                                 ApMethod method, unsigned jobs) {
  auto matches = match_all(set, iou_threshold, jobs);
  MapResult result;
  double sum = 0.0;
  for (const auto &[cls, count] : truth_counts(set)) {
    auto curve = curve_from_ranking(rank_class(set, matches, cls), cls, count);
    double ap = average_precision(curve, method);
    result.classes.push_back({cls, count, ap});
    sum += ap;
  }
  if (!result.classes.empty()) {
    result.map = sum / static_cast<double>(result.classes.size());
    result.defined = true;
  }
  return result;
}

MapResult map_at_50(const EvalSet &set, unsigned jobs) {
  return mean_average_precision(set, 0.5, ApMethod::AllPoint, jobs);
}

std::vector<ClassCounts> class_counts(const EvalSet &set, double iou_threshold,
                                      double confidence_threshold, unsigned jobs) {
  auto matches = match_all(set, iou_threshold, jobs);
  auto truths = truth_counts(set);
  std::set<int> classes;
  for (const auto &[cls, _] : truths)
    classes.insert(cls);
  for (const auto &img : set)
    for (const auto &d : img.detections)
      classes.insert(d.class_id);

  std::vector<ClassCounts> out;
  for (int cls : classes) {
    auto ranked = rank_class(set, matches, cls);
    auto [tp, fp] = counts_at(ranked, cumulative_tp(ranked), confidence_threshold);
    ClassCounts c;
    c.class_id = cls;
    c.tp = tp;
    c.fp = fp;
    auto t = truths.find(cls);
    c.fn = (t == truths.end() ? 0 : t->second) - tp;
    c.precision = precision(c.tp, c.fp);
    c.recall = recall(c.tp, c.fn);
    c.f1 = f1(c.precision.value, c.recall.value);
    out.push_back(c);
  }
  return out;
}

F1Curve f1_confidence_curve(const EvalSet &set, double iou_threshold,
                            std::size_t steps, unsigned jobs) {
  if (steps == 0)
    throw std::invalid_argument("f1 curve needs at least one step");
  auto matches = match_all(set, iou_threshold, jobs);
  F1Curve curve;
  for (std::size_t i = 0; i <= steps; ++i)
    curve.thresholds.push_back(static_cast<double>(i) / static_cast<double>(steps));
  curve.mean_f1.assign(curve.thresholds.size(), 0.0);

  for (const auto &[cls, truths] : truth_counts(set)) {
    auto ranked = rank_class(set, matches, cls);
    auto cum = cumulative_tp(ranked);
    std::vector<double> f1s;
    f1s.reserve(curve.thresholds.size());
    for (double t : curve.thresholds) {
      auto [tp, fp] = counts_at(ranked, cum, t);
      f1s.push_back(f1(precision(tp, fp).value, recall(tp, truths - tp).value).value);
    }
    curve.classes.push_back(cls);
    curve.class_f1.push_back(std::move(f1s));
  }
  if (!curve.classes.empty()) {
    for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
      double sum = 0.0;
      for (const auto &row : curve.class_f1)
        sum += row[i];
      curve.mean_f1[i] = sum / static_cast<double>(curve.classes.size());
    }
  }
  curve.best_index = static_cast<std::size_t>(
      std::max_element(curve.mean_f1.begin(), curve.mean_f1.end()) -
      curve.mean_f1.begin());
  return curve;
}

ConfusionMatrix::ConfusionMatrix(int class_count) : classes_(class_count) {
  if (class_count < 1)
    throw std::invalid_argument("confusion matrix needs at least one class");
  auto side = static_cast<std::size_t>(class_count + 1);
  cells_.assign(side * side, 0);
}

std::size_t ConfusionMatrix::at(int truth_class, int detected_class) const {
  if (truth_class < 0 || truth_class > classes_ || detected_class < 0 ||
      detected_class > classes_)
    throw std::out_of_range("confusion matrix index out of range");
  return cells_[static_cast<std::size_t>(truth_class * (classes_ + 1) + detected_class)];
}

std::size_t &ConfusionMatrix::at(int truth_class, int detected_class) {
  if (truth_class < 0 || truth_class > classes_ || detected_class < 0 ||
      detected_class > classes_)
    throw std::out_of_range("confusion matrix index out of range");
  return cells_[static_cast<std::size_t>(truth_class * (classes_ + 1) + detected_class)];
}

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(cells_.begin(), cells_.end(), std::size_t{0});
}

ConfusionMatrix confusion_matrix(const EvalSet &set, int class_count,
                                 double confidence_threshold, double iou_threshold) {
  ConfusionMatrix cm(class_count);
  auto check = [&](int cls) {
    if (cls < 0 || cls >= class_count)
      throw std::invalid_argument("class id " + std::to_string(cls) +
                                  " outside the confusion matrix");
  };
  for (const auto &img : set) {
    std::vector<std::size_t> dets;
    for (std::size_t d = 0; d < img.detections.size(); ++d) {
      check(img.detections[d].class_id);
      if (img.detections[d].confidence >= confidence_threshold)
        dets.push_back(d);
    }
    for (const auto &t : img.truths)
      check(t.class_id);

    struct Pair {
      double iou;
      std::size_t truth;
      std::size_t det;
    };
    std::vector<Pair> pairs;
    for (std::size_t t = 0; t < img.truths.size(); ++t)
      for (std::size_t d : dets) {
        double v = geometry::iou(img.truths[t].box, img.detections[d].box);
        if (v > 0.0 && v >= iou_threshold)
          pairs.push_back({v, t, d});
      }
    std::stable_sort(pairs.begin(), pairs.end(),
                     [](const Pair &a, const Pair &b) { return a.iou > b.iou; });

    std::vector<bool> truth_used(img.truths.size(), false);
    std::vector<bool> det_used(img.detections.size(), false);
    for (const auto &p : pairs) {
      if (truth_used[p.truth] || det_used[p.det])
        continue;
      truth_used[p.truth] = det_used[p.det] = true;
      ++cm.at(img.truths[p.truth].class_id, img.detections[p.det].class_id);
    }
    for (std::size_t t = 0; t < img.truths.size(); ++t)
      if (!truth_used[t])
        ++cm.at(img.truths[t].class_id, cm.background());
    for (std::size_t d : dets)
      if (!det_used[d])
        ++cm.at(cm.background(), img.detections[d].class_id);
  }
  return cm;
}

EvaluationReport evaluate(const EvalSet &set, const EvaluationOptions &options) {
  EvaluationReport report;
  report.iou_threshold = options.iou_threshold;
  auto map = mean_average_precision(set, options.iou_threshold, options.ap_method,
                                    options.jobs);
  report.map = map.map;
  report.map_defined = map.defined;

  auto curve = f1_confidence_curve(set, options.iou_threshold, options.f1_steps,
                                   options.jobs);
  report.best_threshold = curve.best_threshold();
  report.best_mean_f1 = curve.best_f1();

  auto counts = class_counts(set, options.iou_threshold, report.best_threshold,
                             options.jobs);
  double p_sum = 0.0;
  double r_sum = 0.0;
  for (const auto &ap : map.classes) {
    auto it = std::find_if(counts.begin(), counts.end(), [&](const ClassCounts &c) {
      return c.class_id == ap.class_id;
    });
    ClassReport row;
    row.class_id = ap.class_id;
    row.name = class_label(options.class_names, ap.class_id);
    row.truth_count = ap.truth_count;
    row.ap = ap.ap;
    row.precision = it->precision;
    row.recall = it->recall;
    row.f1 = it->f1;
    p_sum += row.precision.value;
    r_sum += row.recall.value;
    report.classes.push_back(std::move(row));
  }
  if (!report.classes.empty()) {
    auto n = static_cast<double>(report.classes.size());
    report.mean_precision = {p_sum / n, true};
    report.mean_recall = {r_sum / n, true};
  }
  return report;
}

std::string to_csv(const EvaluationReport &report) {
  std::string out = "class,name,truths,ap50,precision,recall,f1\n";
  for (const auto &c : report.classes) {
    out += std::to_string(c.class_id) + "," + c.name + "," +
           std::to_string(c.truth_count) + "," + detail::fixed(c.ap, 6) + "," +
           rate_text(c.precision, 6) + "," + rate_text(c.recall, 6) + "," +
           rate_text(c.f1, 6) + "\n";
  }
  return out;
}

std::string to_json(const EvaluationReport &report) {
  nlohmann::ordered_json j;
  j["metric"] = "mAP@" + detail::fixed(report.iou_threshold, 2);
  j["iou_threshold"] = report.iou_threshold;
  j["map"] = report.map_defined ? nlohmann::ordered_json(report.map)
                                : nlohmann::ordered_json(nullptr);
  j["best_threshold"] = report.best_threshold;
  j["best_mean_f1"] = report.best_mean_f1;
  j["mean_precision"] = rate_json(report.mean_precision);
  j["mean_recall"] = rate_json(report.mean_recall);
  auto classes = nlohmann::ordered_json::array();
  for (const auto &c : report.classes) {
    nlohmann::ordered_json row;
    row["class"] = c.class_id;
    row["name"] = c.name;
    row["truths"] = c.truth_count;
    row["ap"] = c.ap;
    row["precision"] = rate_json(c.precision);
    row["recall"] = rate_json(c.recall);
    row["f1"] = rate_json(c.f1);
    classes.push_back(std::move(row));
  }
  j["classes"] = std::move(classes);
  return j.dump(2) + "\n";
}

std::string to_text(const EvaluationReport &report) {
  std::vector<std::vector<std::string>> rows;
  for (const auto &c : report.classes)
    rows.push_back({c.name, std::to_string(c.truth_count), detail::fixed(c.ap, 3),
                    rate_text(c.precision, 3), rate_text(c.recall, 3),
                    rate_text(c.f1, 3)});
  rows.push_back({"all", "", report.map_defined ? detail::fixed(report.map, 3) : "-",
                  rate_text(report.mean_precision, 3), rate_text(report.mean_recall, 3),
                  detail::fixed(report.best_mean_f1, 3)});
  std::string ap_header = "AP@" + detail::fixed(report.iou_threshold, 2);
  std::string out = detail::render_table(
      {"class", "truths", ap_header, "P", "R", "F1"}, rows);
  out += "mAP@" + detail::fixed(report.iou_threshold, 2) + " " +
         (report.map_defined ? detail::fixed(report.map, 4) : "-") +
         ", best F1 " + detail::fixed(report.best_mean_f1, 4) + " at confidence " +
         detail::fixed(report.best_threshold, 3) + "\n";
  return out;
}

std::string to_csv(const F1Curve &curve) {
  std::string out = "threshold,mean_f1";
  for (int cls : curve.classes)
    out += ",class_" + std::to_string(cls);
  out += "\n";
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    out += detail::fixed(curve.thresholds[i], 3) + "," + detail::fixed(curve.mean_f1[i], 6);
    for (const auto &row : curve.class_f1)
      out += "," + detail::fixed(row[i], 6);
    out += "\n";
  }
  return out;
}

std::string to_json(const F1Curve &curve) {
  nlohmann::ordered_json j;
  j["best_threshold"] = curve.best_threshold();
  j["best_mean_f1"] = curve.best_f1();
  j["classes"] = curve.classes;
  j["thresholds"] = curve.thresholds;
  j["mean_f1"] = curve.mean_f1;
  j["class_f1"] = curve.class_f1;
  return j.dump() + "\n";
}

std::string to_text(const F1Curve &curve) {
  return "best mean F1 " + detail::fixed(curve.best_f1(), 4) + " at confidence " +
         detail::fixed(curve.best_threshold(), 3) + " over " +
         std::to_string(curve.classes.size()) + " classes\n";
}

std::string to_csv(const ConfusionMatrix &m, const std::vector<std::string> &names) {
  std::string out = "truth\\detected";
  for (int c = 0; c <= m.class_count(); ++c)
    out += "," + (c == m.background() ? std::string("background") : class_label(names, c));
  out += "\n";
  for (int r = 0; r <= m.class_count(); ++r) {
    out += r == m.background() ? std::string("background") : class_label(names, r);
    for (int c = 0; c <= m.class_count(); ++c)
      out += "," + std::to_string(m.at(r, c));
    out += "\n";
  }
  return out;
}

std::string to_json(const ConfusionMatrix &m, const std::vector<std::string> &names) {
  nlohmann::ordered_json j;
  std::vector<std::string> labels;
  for (int c = 0; c < m.class_count(); ++c)
    labels.push_back(class_label(names, c));
  labels.push_back("background");
  j["labels"] = labels;
  auto rows = nlohmann::ordered_json::array();
  for (int r = 0; r <= m.class_count(); ++r) {
    std::vector<std::size_t> row;
    for (int c = 0; c <= m.class_count(); ++c)
      row.push_back(m.at(r, c));
    rows.push_back(row);
  }
  j["matrix"] = std::move(rows);
  return j.dump() + "\n";
}

std::string to_text(const ConfusionMatrix &m, const std::vector<std::string> &names) {
  std::vector<std::string> header{"truth \\ detected"};
  for (int c = 0; c <= m.class_count(); ++c)
    header.push_back(c == m.background() ? "bg" : class_label(names, c));
  std::vector<std::vector<std::string>> rows;
  for (int r = 0; r <= m.class_count(); ++r) {
    std::vector<std::string> row{r == m.background() ? "bg" : class_label(names, r)};
    for (int c = 0; c <= m.class_count(); ++c)
      row.push_back(std::to_string(m.at(r, c)));
    rows.push_back(std::move(row));
  }
  return detail::render_table(header, rows);
}

} // namespace signdet::detmetrics
