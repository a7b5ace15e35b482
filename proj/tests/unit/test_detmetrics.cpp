#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "json.hpp"

#include "signdet/detmetrics.hpp"

#include "../support/ap_oracle.hpp"

using namespace signdet;
using namespace signdet::detmetrics;

namespace {

const NormBox kBox{0.5, 0.5, 0.2, 0.2};

ImageSample sample(std::vector<Annotation> truths, std::vector<Detection> dets) {
  return {"x", std::move(truths), std::move(dets)};
}

// A duplicate can only turn into a false positive when no other truth of its
// class would accept it.
bool only_overlaps_its_match(const ImageSample &s, std::size_t det, int truth) {
  const auto &d = s.detections[det];
  for (std::size_t t = 0; t < s.truths.size(); ++t)
    if (static_cast<int>(t) != truth && s.truths[t].class_id == d.class_id &&
        test::plain_iou(d.box, s.truths[t].box) >= 0.5)
      return false;
  return true;
}

} // namespace

TEST(Match, SingleTruePositive) {
  std::vector<Detection> d{{0, {0.5, 0.5, 0.2, 0.19}, 0.9}};
  std::vector<Annotation> t{{0, kBox}};
  auto m = match(d, t, 0.5);
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fp, 0u);
  EXPECT_EQ(m.fn, 0u);
  EXPECT_TRUE(m.is_true_positive(0));
  EXPECT_EQ(m.truth_match[0], 0);
}

TEST(Match, TwoDetectionsOneTruth) {
  // The 0.8-confidence box overlaps more, but the 0.9 one is taken first.
  std::vector<Detection> d{{0, {0.5, 0.5, 0.2, 0.2}, 0.8}, {0, {0.51, 0.5, 0.2, 0.2}, 0.9}};
  std::vector<Annotation> t{{0, kBox}};
  auto m = match(d, t, 0.5);
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_TRUE(m.is_true_positive(1));
  EXPECT_FALSE(m.is_true_positive(0));
}

TEST(Match, ClassesAreSegregated) {
  std::vector<Detection> d{{1, kBox, 0.9}};
  std::vector<Annotation> t{{0, kBox}};
  auto m = match(d, t, 0.5);
  EXPECT_EQ(m.tp, 0u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.fn, 1u);
}

TEST(Match, BelowThresholdIsFalsePositive) {
  std::vector<Detection> d{{0, {0.6, 0.5, 0.2, 0.2}, 0.9}}; // IoU 1/3
  std::vector<Annotation> t{{0, kBox}};
  EXPECT_EQ(match(d, t, 0.5).tp, 0u);
  EXPECT_EQ(match(d, t, 0.3).tp, 1u);
}

TEST(Match, ZeroOverlapNeverMatchesEvenAtThresholdZero) {
  std::vector<Detection> d{{0, {0.1, 0.1, 0.1, 0.1}, 0.9}};
  std::vector<Annotation> t{{0, {0.8, 0.8, 0.1, 0.1}}};
  EXPECT_EQ(match(d, t, 0.0).tp, 0u);
}

TEST(Match, CountIdentitiesOnRandomImages) {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 300; ++i) {
    auto set = test::random_eval_set(rng, 1);
    const auto &s = set[0];
    auto m = match(s.detections, s.truths, 0.5);
    EXPECT_EQ(m.tp + m.fn, s.truths.size());
    EXPECT_EQ(m.tp + m.fp, s.detections.size());
    std::vector<int> seen(s.truths.size(), 0);
    for (std::size_t k = 0; k < m.detection_match.size(); ++k)
      if (m.detection_match[k] >= 0) {
        ++seen[static_cast<std::size_t>(m.detection_match[k])];
        EXPECT_EQ(m.truth_match[static_cast<std::size_t>(m.detection_match[k])], static_cast<int>(k));
      }
    for (int c : seen)
      EXPECT_LE(c, 1);
  }
}

TEST(Rates, PaperRows) {
  EXPECT_NEAR(f1(0.922, 0.782).value, 0.846, 0.0005);
  EXPECT_NEAR(f1(0.909, 0.902).value, 0.905, 0.0005);
}

TEST(Rates, ZeroDenominators) {
  auto p = precision(0, 0);
  EXPECT_EQ(p.value, 0.0);
  EXPECT_FALSE(p.defined);
  EXPECT_FALSE(recall(0, 0).defined);
  EXPECT_FALSE(f1(0.0, 0.0).defined);
  EXPECT_TRUE(precision(1, 0).defined);
  EXPECT_DOUBLE_EQ(precision(3, 1).value, 0.75);
  EXPECT_DOUBLE_EQ(recall(1, 3).value, 0.25);
}

TEST(Rates, HarmonicBelowGeometricBelowArithmetic) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    double p = u(rng), r = u(rng);
    double h = f1(p, r).value;
    EXPECT_DOUBLE_EQ(h, f1(r, p).value);
    EXPECT_LE(h, std::sqrt(p * r) + 1e-15);
    EXPECT_LE(std::sqrt(p * r), (p + r) / 2 + 1e-15);
  }
}

TEST(PrCurveTest, SingleTruePositive) {
  EvalSet set{sample({{0, kBox}}, {{0, kBox, 0.9}})};
  auto c = pr_curve(set, 0, 0.5);
  ASSERT_EQ(c.points.size(), 1u);
  EXPECT_EQ(c.points[0].precision, 1.0);
  EXPECT_EQ(c.points[0].recall, 1.0);
  EXPECT_EQ(average_precision(c), 1.0);
}

TEST(PrCurveTest, TruePositiveThenFalsePositive) {
  EvalSet set{sample({{0, kBox}}, {{0, kBox, 0.9}, {0, {0.1, 0.1, 0.1, 0.1}, 0.5}})};
  auto c = pr_curve(set, 0, 0.5);
  ASSERT_EQ(c.points.size(), 2u);
  EXPECT_EQ(c.points[0].precision, 1.0);
  EXPECT_EQ(c.points[0].recall, 1.0);
  EXPECT_EQ(c.points[1].precision, 0.5);
  EXPECT_EQ(c.points[1].recall, 1.0);
  EXPECT_EQ(average_precision(c), 1.0);
}

TEST(PrCurveTest, FalsePositiveThenTruePositive) {
  EvalSet set{sample({{0, kBox}}, {{0, {0.1, 0.1, 0.1, 0.1}, 0.9}, {0, kBox, 0.5}})};
  auto c = pr_curve(set, 0, 0.5);
  ASSERT_EQ(c.points.size(), 2u);
  EXPECT_EQ(c.points[0].precision, 0.0);
  EXPECT_EQ(c.points[0].recall, 0.0);
  EXPECT_EQ(c.points[1].precision, 0.5);
  EXPECT_EQ(c.points[1].recall, 1.0);
  EXPECT_DOUBLE_EQ(average_precision(c), 0.5);
}

TEST(PrCurveTest, MonotoneRecallAndConfidence) {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 200; ++i) {
    auto set = test::random_eval_set(rng);
    for (int cls = 0; cls < 5; ++cls) {
      auto c = pr_curve(set, cls, 0.5);
      for (std::size_t k = 1; k < c.points.size(); ++k) {
        EXPECT_GE(c.points[k].recall, c.points[k - 1].recall);
        EXPECT_LT(c.points[k].confidence, c.points[k - 1].confidence);
      }
    }
  }
}

TEST(AveragePrecision, ElevenPointOnKnownCurve) {
  EvalSet set{sample({{0, kBox}}, {{0, {0.1, 0.1, 0.1, 0.1}, 0.9}, {0, kBox, 0.5}})};
  auto c = pr_curve(set, 0, 0.5);
  EXPECT_NEAR(average_precision(c, ApMethod::ElevenPoint), 0.5, 1e-12);
}

TEST(AveragePrecision, MatchesBruteForceOracle) {
  std::mt19937_64 rng(101);
  int checked = 0;
  for (int i = 0; i < 300; ++i) {
    auto set = test::random_eval_set(rng);
    for (int cls = 0; cls < 5; ++cls) {
      double expect = test::oracle_ap(set, cls, 0.5);
      if (std::isnan(expect))
        continue;
      ASSERT_NEAR(average_precision(pr_curve(set, cls, 0.5)), expect, 1e-9) << "instance " << i;
      ++checked;
    }
  }
  EXPECT_GT(checked, 300);
}

TEST(AveragePrecision, DuplicateLowConfidenceNeverHelps) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    auto set = test::random_eval_set(rng);
    for (int cls = 0; cls < 5; ++cls) {
      if (test::truth_count(set, cls) == 0)
        continue;
      double before = average_precision(pr_curve(set, cls, 0.5));
      auto copy = set;
      for (auto &s : copy) {
        auto m = match(s.detections, s.truths, 0.5);
        for (std::size_t k = 0; k < s.detections.size(); ++k)
          if (m.is_true_positive(k) && s.detections[k].class_id == cls &&
              only_overlaps_its_match(s, k, m.detection_match[k])) {
            Detection dup = s.detections[k];
            dup.confidence *= 0.5;
            s.detections.push_back(dup);
            break;
          }
      }
      EXPECT_LE(average_precision(pr_curve(copy, cls, 0.5)), before + 1e-12);
    }
  }
}

TEST(Map, AllPerfect) {
  EvalSet set{sample({{0, kBox}, {1, {0.2, 0.2, 0.1, 0.1}}},
                     {{0, kBox, 0.9}, {1, {0.2, 0.2, 0.1, 0.1}, 0.8}})};
  auto r = map_at_50(set);
  EXPECT_TRUE(r.defined);
  EXPECT_EQ(r.map, 1.0);
}

TEST(Map, OneClassMissed) {
  EvalSet set{sample({{0, kBox}, {1, {0.2, 0.2, 0.1, 0.1}}}, {{0, kBox, 0.9}})};
  EXPECT_DOUBLE_EQ(map_at_50(set).map, 0.5);
}

TEST(Map, ClassWithoutTruthExcluded) {
  EvalSet set{sample({{0, kBox}}, {{0, kBox, 0.9}, {3, {0.2, 0.2, 0.1, 0.1}, 0.8}})};
  auto r = map_at_50(set);
  ASSERT_EQ(r.classes.size(), 1u);
  EXPECT_EQ(r.map, 1.0);
  EXPECT_FALSE(map_at_50(EvalSet{sample({}, {{0, kBox, 0.9}})}).defined);
}

TEST(Map, IndependentOfJobs) {
  std::mt19937_64 rng(44);
  for (int i = 0; i < 20; ++i) {
    auto set = test::random_eval_set(rng);
    auto a = mean_average_precision(set, 0.5, ApMethod::AllPoint, 1);
    auto b = mean_average_precision(set, 0.5, ApMethod::AllPoint, 4);
    EXPECT_EQ(a.map, b.map);
  }
}

TEST(F1CurveTest, AllTruePositivesAtOneConfidence) {
  EvalSet set{sample({{0, kBox}}, {{0, kBox, 0.9}})};
  auto c = f1_confidence_curve(set, 0.5, 1000);
  ASSERT_EQ(c.thresholds.size(), 1001u);
  for (std::size_t i = 0; i < c.thresholds.size(); ++i)
    EXPECT_EQ(c.mean_f1[i], c.thresholds[i] <= 0.9 ? 1.0 : 0.0) << c.thresholds[i];
  EXPECT_EQ(c.best_index, 0u);
  EXPECT_EQ(c.best_f1(), 1.0);
}

TEST(F1CurveTest, ThresholdZeroEqualsUnfilteredMatch) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 50; ++i) {
    auto set = test::random_eval_set(rng);
    auto c = f1_confidence_curve(set, 0.5, 100);
    for (std::size_t k = 0; k < c.classes.size(); ++k) {
      int cls = c.classes[k];
      std::size_t tp = 0, fp = 0, fn = 0;
      for (const auto &s : set) {
        std::vector<Detection> d;
        std::vector<Annotation> t;
        for (const auto &x : s.detections)
          if (x.class_id == cls)
            d.push_back(x);
        for (const auto &x : s.truths)
          if (x.class_id == cls)
            t.push_back(x);
        auto m = match(d, t, 0.5);
        tp += m.tp;
        fp += m.fp;
        fn += m.fn;
      }
      double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
      double r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
      double expect = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
      EXPECT_NEAR(c.class_f1[k][0], expect, 1e-12);
    }
  }
}

TEST(F1CurveTest, Deterministic) {
  std::mt19937_64 rng(12);
  auto set = test::random_eval_set(rng);
  auto a = f1_confidence_curve(set, 0.5, 1000, 1);
  auto b = f1_confidence_curve(set, 0.5, 1000, 3);
  EXPECT_EQ(a.best_index, b.best_index);
  EXPECT_EQ(a.mean_f1, b.mean_f1);
}

TEST(Confusion, PerfectIsDiagonal) {
  EvalSet set{sample({{0, kBox}, {1, {0.2, 0.2, 0.1, 0.1}}},
                     {{0, kBox, 0.9}, {1, {0.2, 0.2, 0.1, 0.1}, 0.8}})};
  auto m = confusion_matrix(set, 2);
  EXPECT_EQ(m.at(0, 0), 1u);
  EXPECT_EQ(m.at(1, 1), 1u);
  EXPECT_EQ(m.total(), 2u);
}

TEST(Confusion, CrossClassAndBackground) {
  EvalSet set{sample({{0, kBox}, {2, {0.8, 0.8, 0.1, 0.1}}},
                     {{1, {0.5, 0.5, 0.2, 0.19}, 0.9}, {2, {0.2, 0.2, 0.1, 0.1}, 0.7}})};
  auto m = confusion_matrix(set, 3);
  EXPECT_EQ(m.at(0, 1), 1u);                  // truth 0 seen as 1
  EXPECT_EQ(m.at(m.background(), 2), 1u);     // spurious detection
  EXPECT_EQ(m.at(2, m.background()), 1u);     // missed truth
  EXPECT_EQ(m.total(), 3u);
}

TEST(Confusion, ConfidenceFilterApplies) {
  EvalSet set{sample({{0, kBox}}, {{0, kBox, 0.1}})};
  auto m = confusion_matrix(set, 1, 0.25, 0.45);
  EXPECT_EQ(m.at(0, m.background()), 1u);
  EXPECT_EQ(m.at(0, 0), 0u);
}

TEST(Evaluate, ReportShapes) {
  EvalSet set{sample({{0, kBox}, {1, {0.2, 0.2, 0.1, 0.1}}},
                     {{0, kBox, 0.9}, {1, {0.7, 0.7, 0.1, 0.1}, 0.8}})};
  EvaluationOptions opt;
  opt.class_names = {"a", "b"};
  auto r = evaluate(set, opt);
  EXPECT_DOUBLE_EQ(r.map, 0.5);
  ASSERT_EQ(r.classes.size(), 2u);
  EXPECT_EQ(r.classes[0].name, "a");
  auto j = nlohmann::json::parse(to_json(r));
  EXPECT_DOUBLE_EQ(j["map"].get<double>(), 0.5);
  std::string csv = to_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')).find("class"), 0u);
  EXPECT_NE(to_text(r).find("mAP@0.5"), std::string::npos);
}
