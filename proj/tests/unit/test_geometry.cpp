#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "signdet/geometry.hpp"

using namespace signdet;
using namespace signdet::geometry;

namespace {

// Plain-arithmetic IoU used as the reference in this file.
double ref_iou(const NormBox &a, const NormBox &b) {
  double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2, ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
  double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2, by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  double inter = iw * ih;
  double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<Detection> random_dets(std::mt19937_64 &rng, int n, int classes) {
  std::uniform_real_distribution<double> pos(0.1, 0.9), size(0.05, 0.4), conf(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, classes - 1);
  std::vector<Detection> out;
  for (int i = 0; i < n; ++i) {
    Detection d{cls(rng), {pos(rng), pos(rng), size(rng), size(rng)}, conf(rng)};
    // Coarse confidences create ties.
    if (i % 3 == 0)
      d.confidence = std::round(d.confidence * 4) / 4;
    out.push_back(d);
  }
  return out;
}

} // namespace

TEST(Corners, CenterToCorners) {
  EXPECT_EQ(to_corners({0.5, 0.5, 0.5, 0.5}), (CornerBox{0.25, 0.25, 0.75, 0.75}));
}

TEST(Corners, RoundTripOnRandomBoxes) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    NormBox b{u(rng), u(rng), u(rng) + 1e-3, u(rng) + 1e-3};
    NormBox r = from_corners(to_corners(b));
    EXPECT_NEAR(r.cx, b.cx, 1e-12);
    EXPECT_NEAR(r.cy, b.cy, 1e-12);
    EXPECT_NEAR(r.w, b.w, 1e-12);
    EXPECT_NEAR(r.h, b.h, 1e-12);
  }
}

TEST(Corners, ClampClipsOverflow) {
  CornerBox c = to_corners({0.1, 0.1, 0.4, 0.4});
  EXPECT_NEAR(c.x1, -0.1, 1e-15);
  NormBox clamped = from_corners(c, true);
  EXPECT_NEAR(clamped.cx, 0.15, 1e-12);
  EXPECT_NEAR(clamped.w, 0.3, 1e-12);
  NormBox raw = from_corners(c, false);
  EXPECT_NEAR(raw.cx, 0.1, 1e-12);
}

TEST(Iou, KnownValues) {
  CornerBox a{0, 0, 2, 2}, b{1, 1, 3, 3};
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 7.0);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, CornerBox{5, 5, 6, 6}), 0.0);
  EXPECT_EQ(iou(a, CornerBox{2, 0, 3, 2}), 0.0); // touching edge
}

TEST(Iou, DegenerateIsZero) {
  CornerBox a{0, 0, 2, 2}, flat{0.5, 0.5, 1.5, 0.5};
  EXPECT_EQ(iou(a, flat), 0.0);
  EXPECT_EQ(iou(flat, flat), 0.0);
}

TEST(Iou, SymmetricBoundedAndMatchesReference) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pos(0.0, 1.0), size(0.01, 0.8);
  for (int i = 0; i < 2000; ++i) {
    NormBox a{pos(rng), pos(rng), size(rng), size(rng)};
    NormBox b{pos(rng), pos(rng), size(rng), size(rng)};
    double ab = iou(a, b);
    EXPECT_EQ(ab, iou(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_NEAR(ab, ref_iou(a, b), 1e-12);
    EXPECT_NEAR(iou(a, a), 1.0, 1e-12);
  }
}

TEST(Iou, CenteredWidthHeight) {
  EXPECT_DOUBLE_EQ(iou_wh(2, 2, 1, 1), 0.25);
  EXPECT_DOUBLE_EQ(iou_wh(2, 1, 1, 2), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(iou_wh(3, 4, 3, 4), 1.0);
  EXPECT_EQ(iou_wh(0, 1, 1, 1), 0.0);
}

TEST(Nms, SingleDetectionKept) {
  std::vector<Detection> d{{0, {0.5, 0.5, 0.2, 0.2}, 0.9}};
  EXPECT_EQ(nms(d), d);
}

TEST(Nms, DuplicateSameClassSuppressed) {
  std::vector<Detection> d{{0, {0.5, 0.5, 0.2, 0.2}, 0.8}, {0, {0.5, 0.5, 0.2, 0.2}, 0.9}};
  auto kept = nms(d);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].confidence, 0.9);
}

TEST(Nms, DifferentClassesBothKeptWhenClassAware) {
  std::vector<Detection> d{{0, {0.5, 0.5, 0.2, 0.2}, 0.9}, {1, {0.5, 0.5, 0.2, 0.2}, 0.8}};
  EXPECT_EQ(nms(d).size(), 2u);
  NmsOptions agnostic;
  agnostic.class_aware = false;
  EXPECT_EQ(nms(d, agnostic).size(), 1u);
}

TEST(Nms, DropsLowConfidenceAndDegenerate) {
  std::vector<Detection> d{{0, {0.5, 0.5, 0.2, 0.2}, 0.1},
                           {0, {0.2, 0.2, 0.0, 0.2}, 0.9},
                           {0, {0.8, 0.8, 0.1, 0.1}, 0.25}};
  auto kept = nms(d);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].confidence, 0.25);
}

TEST(Nms, EmptyInEmptyOut) { EXPECT_TRUE(nms(std::vector<Detection>{}).empty()); }

TEST(Nms, TiesBrokenByInputIndex) {
  std::vector<Detection> d{{0, {0.2, 0.2, 0.1, 0.1}, 0.5}, {1, {0.7, 0.7, 0.1, 0.1}, 0.5}};
  auto kept = nms(d);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].class_id, 0);
  EXPECT_EQ(kept[1].class_id, 1);
}

TEST(Nms, RejectsThresholdsOutsideUnitInterval) {
  std::vector<Detection> d;
  EXPECT_THROW(nms(d, {1.5, 0.25, true}), std::invalid_argument);
  EXPECT_THROW(nms(d, {0.45, -0.1, true}), std::invalid_argument);
}

// Property suite over random sets, checked against a direct re-statement of
// the greedy rule.
TEST(Nms, RandomSetInvariants) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> count(0, 30);
  std::uniform_real_distribution<double> thr(0.1, 0.9);
  for (int trial = 0; trial < 1000; ++trial) {
    auto dets = random_dets(rng, count(rng), 3);
    NmsOptions opt{thr(rng), 0.25, trial % 4 != 0};
    auto kept = nms(dets, opt);

    for (std::size_t i = 1; i < kept.size(); ++i)
      ASSERT_GE(kept[i - 1].confidence, kept[i].confidence);
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j)
        if (!opt.class_aware || kept[i].class_id == kept[j].class_id)
          ASSERT_LE(ref_iou(kept[i].box, kept[j].box), opt.iou_threshold + 1e-12);
    ASSERT_EQ(nms(kept, opt), kept);

    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return dets[a].confidence > dets[b].confidence;
    });
    std::vector<Detection> expect;
    for (std::size_t i : order) {
      const auto &d = dets[i];
      if (d.confidence < opt.confidence_threshold || d.box.w <= 0 || d.box.h <= 0)
        continue;
      bool keep = true;
      for (const auto &k : expect)
        if ((!opt.class_aware || k.class_id == d.class_id) && ref_iou(k.box, d.box) > opt.iou_threshold)
          keep = false;
      if (keep)
        expect.push_back(d);
    }
    ASSERT_EQ(kept, expect);
  }
}
