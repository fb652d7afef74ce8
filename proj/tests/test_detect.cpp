#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "bed/bed.hpp"
#include "test_support.hpp"

using namespace bed;

namespace {

FloatTensor zero_grid() { return FloatTensor(kGridShape, 0.0f); }

void set_cell(FloatTensor& g, std::size_t r, std::size_t c, std::size_t box, std::array<float, 5> v) {
  for (std::size_t k = 0; k < 5; ++k) g.at(box_channel(box, k), r, c) = v[k];
}

Detection random_detection(SeededUniform& rng, int classes = 3) {
  const float x = rng(0, 200), y = rng(0, 200);
  // Coarse scores make ties common.
  return {static_cast<int>(rng.below(static_cast<std::size_t>(classes))),
          static_cast<float>(1 + rng.below(10)) / 10.0f,
          {x, y, x + rng(1, 60), y + rng(1, 60)}};
}

}  // namespace

TEST(DecodeGrid, ZeroGridIsEmpty) { EXPECT_TRUE(decode_grid(zero_grid(), 0.1f).empty()); }

TEST(DecodeGrid, CenteredFullImageBox) {
  auto g = zero_grid();
  g.at(2, 3, 3) = 1.0f;
  set_cell(g, 3, 3, 0, {0.5f, 0.5f, 1.0f, 1.0f, 1.0f});
  const auto d = decode_grid(g, 0.1f);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].class_id, 2);
  EXPECT_EQ(d[0].score, 1.0f);
  EXPECT_EQ(d[0].box, (Box{0, 0, 224, 224}));
}

TEST(DecodeGrid, CornerBoxIsClipped) {
  auto g = zero_grid();
  g.at(4, 0, 0) = 0.5f;
  g.at(1, 0, 0) = 0.25f;
  set_cell(g, 0, 0, 1, {0.0f, 0.0f, 32.0f / 224.0f, 32.0f / 224.0f, 0.8f});
  const auto d = decode_grid(g, 0.1f);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].class_id, 4);
  EXPECT_FLOAT_EQ(d[0].score, 0.4f);
  EXPECT_EQ(d[0].box, (Box{0, 0, 16, 16}));
}

TEST(DecodeGrid, ValuesClampedBeforeGeometry) {
  auto g = zero_grid();
  g.at(0, 6, 6) = 3.0f;
  set_cell(g, 6, 6, 0, {2.0f, -1.0f, 5.0f, 0.0f, 7.0f});
  const auto d = decode_grid(g, 0.5f);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].score, 1.0f);
  EXPECT_EQ(d[0].box, (Box{112, 192, 224, 192}));
}

TEST(DecodeGrid, BoundedAndMonotoneInThreshold) {
  SeededUniform rng(41);
  for (int i = 0; i < 200; ++i) {
    const auto g = testkit::random_tensor(kGridShape, rng, -0.2f, 1.2f);
    std::size_t prev = 99;
    for (float t = 0.0f; t <= 1.0f; t += 0.05f) {
      const auto n = decode_grid(g, t).size();
      EXPECT_LE(n, 98u);
      EXPECT_LE(n, prev);
      prev = n;
    }
  }
}

TEST(DecodeGrid, ShapeMismatch) {
  EXPECT_THROW(decode_grid(FloatTensor({15, 7, 6}), 0.1f), Error);
}

TEST(Iou, Examples) {
  const Box a{0, 0, 2, 2}, b{1, 1, 3, 3};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, Box{5, 5, 6, 6}), 0.0);
  EXPECT_NEAR(iou(a, b), 1.0 / 7.0, 1e-12);
  EXPECT_NEAR(iou(a, b), testkit::raster_iou(0, 0, 2, 2, 1, 1, 3, 3), 1e-12);
  EXPECT_EQ(iou(Box{1, 1, 1, 1}, Box{1, 1, 1, 1}), 0.0);
}

TEST(Iou, MatchesRasterOracle) {
  SeededUniform rng(42);
  for (int i = 0; i < 300; ++i) {
    int c[8];
    for (int k = 0; k < 4; ++k) c[k] = static_cast<int>(rng.below(12));
    for (int k = 4; k < 8; ++k) c[k] = static_cast<int>(rng.below(12));
    const int ax0 = std::min(c[0], c[1]), ax1 = std::max(c[0], c[1]) + 1;
    const int ay0 = std::min(c[2], c[3]), ay1 = std::max(c[2], c[3]) + 1;
    const int bx0 = std::min(c[4], c[5]), bx1 = std::max(c[4], c[5]) + 1;
    const int by0 = std::min(c[6], c[7]), by1 = std::max(c[6], c[7]) + 1;
    const Box a{float(ax0), float(ay0), float(ax1), float(ay1)}, b{float(bx0), float(by0), float(bx1), float(by1)};
    const double v = iou(a, b);
    EXPECT_NEAR(v, testkit::raster_iou(ax0, ay0, ax1, ay1, bx0, by0, bx1, by1), 1e-12);
    EXPECT_DOUBLE_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Nms, Examples) {
  const Detection one{0, 0.5f, {1, 1, 5, 5}};
  EXPECT_EQ(nms({one}, 0.5f), std::vector<Detection>{one});
  const Detection hi{1, 0.9f, {0, 0, 10, 10}}, lo{1, 0.8f, {0, 0, 10, 10}};
  EXPECT_EQ(nms({lo, hi}, 0.5f), std::vector<Detection>{hi});
  const Detection other{2, 0.8f, {0, 0, 10, 10}};
  EXPECT_EQ(nms({lo, other, hi}, 0.5f).size(), 2u);
  EXPECT_THROW(nms({one}, 1.5f), Error);
}

TEST(Nms, MatchesBruteForceAndInvariants) {
  SeededUniform rng(43);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Detection> dets(rng.below(51));
    for (auto& d : dets) d = random_detection(rng);
    if (dets.size() > 2) dets[1] = Detection{dets[0].class_id, dets[0].score, dets[0].box};
    const float thr = static_cast<float>(rng.below(11)) / 10.0f;
    const auto kept = nms(dets, thr);
    ASSERT_EQ(kept, testkit::brute_force_nms(dets, thr));
    EXPECT_EQ(nms(kept, thr), kept);
    for (std::size_t i = 0; i < kept.size(); ++i) {
      EXPECT_NE(std::find(dets.begin(), dets.end(), kept[i]), dets.end());
      for (std::size_t j = i + 1; j < kept.size(); ++j) {
        if (kept[i].class_id == kept[j].class_id) {
          EXPECT_LE(iou(kept[i].box, kept[j].box), thr);
        }
      }
      if (i) {
        EXPECT_GE(kept[i - 1].score, kept[i].score);
      }
    }
  }
}

TEST(Loss, ZeroOnEncodedTarget) {
  auto g = zero_grid();
  const GroundTruth gt{"a", 3, {40, 50, 120, 170}};
  const auto t = encode_target(gt.box);
  for (std::size_t k = 0; k < 5; ++k) {
    g.at(box_channel(0, k), t.row, t.col) = static_cast<float>(t.values[k]);
    g.at(box_channel(1, k), t.row, t.col) = static_cast<float>(t.values[k]);
  }
  const auto l = detection_loss(g, {gt});
  EXPECT_LT(l.coord_mse, 1e-12);
}

TEST(Loss, UniformLogitsGiveLogFive) {
  const auto l = detection_loss(zero_grid(), {{"a", 1, {10, 10, 30, 30}}, {"a", 4, {150, 150, 200, 220}}});
  EXPECT_NEAR(l.class_ce, std::log(5.0), 1e-12);
}

TEST(Loss, BoxOutsideImage) {
  try {
    detection_loss(zero_grid(), {{"a", 0, {-1, 0, 10, 10}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BoxOutsideImage);
  }
}

TEST(Loss, MatchesScalarOracle) {
  SeededUniform rng(44);
  for (int i = 0; i < 100; ++i) {
    const auto pred = testkit::random_tensor(kGridShape, rng, -1.0f, 1.5f);
    std::vector<GroundTruth> truth;
    for (std::size_t k = 0, n = 1 + rng.below(4); k < n; ++k) {
      const float x = rng(0, 200), y = rng(0, 200);
      truth.push_back({"img", static_cast<int>(rng.below(5)), {x, y, std::min(224.0f, x + rng(1, 100)), std::min(224.0f, y + rng(1, 100))}});
    }
    const auto got = detection_loss(pred, truth);
    const auto [mse, ce] = testkit::scalar_loss(pred, truth);
    EXPECT_NEAR(got.coord_mse, mse, 1e-9);
    EXPECT_NEAR(got.class_ce, ce, 1e-9);
  }
}

TEST(MeanAp, PerfectAndEmpty) {
  std::vector<GroundTruth> gt{{"a", 0, {0, 0, 10, 10}}, {"b", 1, {5, 5, 50, 50}}, {"b", 0, {100, 100, 150, 150}}};
  std::vector<DetectionRecord> echo;
  for (const auto& g : gt) echo.push_back({g.image_id, {g.class_id, 1.0f, g.box}});
  EXPECT_DOUBLE_EQ(mean_average_precision(echo, gt).mean_ap, 1.0);
  EXPECT_DOUBLE_EQ(mean_average_precision({}, gt).mean_ap, 0.0);
}

TEST(MeanAp, DuplicateAndMiss) {
  // TP, FP (duplicate), TP; one truth never found: AP = 1/3 + (1/3)(2/3) = 5/9.
  std::vector<GroundTruth> gt{{"a", 0, {0, 0, 10, 10}}, {"b", 0, {0, 0, 10, 10}}, {"c", 0, {0, 0, 10, 10}}};
  std::vector<DetectionRecord> d{{"a", {0, 0.9f, {0, 0, 10, 10}}}, {"a", {0, 0.8f, {0, 0, 10, 10}}},
                                 {"b", {0, 0.7f, {0, 0, 10, 10}}}};
  const auto r = mean_average_precision(d, gt);
  EXPECT_NEAR(r.mean_ap, 5.0 / 9.0, 1e-12);
  ASSERT_TRUE(r.class_ap[0].has_value());
  EXPECT_FALSE(r.class_ap[1].has_value());
}

TEST(MeanAp, PermutationInvariant) {
  SeededUniform rng(45);
  for (int i = 0; i < 50; ++i) {
    std::vector<GroundTruth> gt;
    std::vector<DetectionRecord> d;
    for (int k = 0; k < 20; ++k) {
      const auto det = random_detection(rng, 5);
      gt.push_back({std::to_string(rng.below(4)), det.class_id, det.box});
      Box jitter = det.box;
      jitter.x_max += rng(0, 10);
      d.push_back({gt.back().image_id, {det.class_id, det.score, jitter}});
      if (rng.below(3) == 0) d.push_back({std::to_string(rng.below(4)), random_detection(rng, 5)});
    }
    const auto base = mean_average_precision(d, gt);
    EXPECT_GE(base.mean_ap, 0.0);
    EXPECT_LE(base.mean_ap, 1.0);
    for (int p = 0; p < 5; ++p) {
      for (std::size_t k = d.size(); k > 1; --k) std::swap(d[k - 1], d[rng.below(k)]);
      EXPECT_EQ(mean_average_precision(d, gt).mean_ap, base.mean_ap);
    }
  }
}

TEST(Records, FormatAndParse) {
  const DetectionRecord r{"img_01", {3, 0.123456789f, {1.5f, 2.25f, 100, 200.125f}}};
  const auto line = format_record(r);
  EXPECT_EQ(line, "img_01 3 0.123457 1.500 2.250 100.000 200.125\n");
  const auto back = parse_records(line);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].image_id, "img_01");
  EXPECT_EQ(back[0].det.box, r.det.box);
  const auto gts = parse_truths("# comment\nimg 1 0 0 10 10\n\n");
  ASSERT_EQ(gts.size(), 1u);
  EXPECT_EQ(gts[0].class_id, 1);
  EXPECT_THROW(parse_truths("img 1 0 0 10\n"), Error);
  EXPECT_THROW(parse_records("img x 0.5 0 0 10 10\n"), Error);
}
