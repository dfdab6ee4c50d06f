#include <gtest/gtest.h>

#include <cmath>

#include "mtssl/pseudolabel.hpp"
#include "mtssl/rng.hpp"

using namespace mtssl;

namespace {

// Planar K x H x W logits from a per-pixel generator.
template <typename Fn>
std::vector<double> planar(int k, int h, int w, Fn fn) {
  std::vector<double> v(static_cast<std::size_t>(k) * h * w);
  for (int c = 0; c < k; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) v[(static_cast<std::size_t>(c) * h + y) * w + x] = fn(c, y, x);
  return v;
}

}  // namespace

TEST(SegSigma, DominantLogit) {
  const auto l = planar(4, 2, 3, [](int c, int, int) { return c == 2 ? 10.0 : 0.0; });
  const auto p = seg_sigma<double>(l, 4, 2, 3);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(p.classes.classes[i], 2);
    EXPECT_NEAR(p.confidence[i], std::exp(10.0) / (std::exp(10.0) + 3.0), 1e-6);
  }
}

TEST(SegSigma, TiesGoToLowestId) {
  const auto l = planar(4, 2, 2, [](int, int, int) { return 0.7; });
  const auto p = seg_sigma<double>(l, 4, 2, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(p.classes.classes[i], 0);
    EXPECT_NEAR(p.confidence[i], 0.25, 1e-7);
  }
}

TEST(SegSigma, TwoClassClosedForm) {
  const auto l = planar(2, 1, 1, [](int c, int, int) { return c == 0 ? 1.0 : 3.0; });
  const auto p = seg_sigma<double>(l, 2, 1, 1);
  EXPECT_EQ(p.classes.classes[0], 1);
  EXPECT_NEAR(p.confidence[0], std::exp(3.0) / (std::exp(1.0) + std::exp(3.0)), 1e-7);
  EXPECT_NEAR(p.confidence[0], 0.8808, 5e-5);
}

TEST(SegSigma, ShiftInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto l = planar(4, 3, 3, [&](int, int, int) { return rng.uniform(-5, 5); });
    auto shifted = l;
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        const double s = rng.uniform(-100, 100);
        for (int c = 0; c < 4; ++c) shifted[(static_cast<std::size_t>(c) * 3 + y) * 3 + x] += s;
      }
    const auto a = seg_sigma<double>(l, 4, 3, 3), b = seg_sigma<double>(shifted, 4, 3, 3);
    EXPECT_EQ(a.classes.classes, b.classes.classes);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(a.confidence[i], b.confidence[i], 1e-6);
  }
}

TEST(SegSigma, Errors) {
  std::vector<double> l(8, 0.0);
  l[3] = NAN;
  EXPECT_THROW(seg_sigma<double>(l, 2, 2, 2), NonFinite);
  EXPECT_THROW(seg_sigma<double>(std::vector<double>(4, 0.0), 1, 2, 2), OutOfRangeInput);
  EXPECT_THROW(seg_sigma<double>(std::vector<double>(7, 0.0), 2, 2, 2), ShapeMismatch);
}

TEST(DetSigma, Threshold) {
  const BoxSet b{{0, 0, 2, 2, 0, 0.6}, {1, 1, 3, 3, 1, 0.4}, {2, 2, 4, 4, 2, 0.5}};
  const auto kept = det_sigma(b, 0.5).boxes;
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].score, 0.6);
  EXPECT_EQ(kept[1].score, 0.5);
  EXPECT_EQ(det_sigma(b, 0.0).boxes.size(), 3u);
  EXPECT_TRUE(det_sigma({}, 0.5).boxes.empty());
}

TEST(DetSigma, Idempotent) {
  Rng rng(4);
  BoxSet b;
  for (int i = 0; i < 40; ++i) b.push_back({0, 0, 1, 1, 0, rng.uniform()});
  const auto once = det_sigma(b, 0.5).boxes;
  const auto twice = det_sigma(once, 0.5).boxes;
  ASSERT_EQ(once.size(), twice.size());
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(once[i].score, twice[i].score);
}

TEST(MapPseudo, IdentityUnchanged) {
  const auto l = planar(3, 4, 4, [](int c, int y, int x) { return c == (x + y) % 3 ? 2.0 : 0.0; });
  const auto seg = seg_sigma<double>(l, 3, 4, 4);
  const DetPseudoLabel det{{{0.5, 0.5, 3.0, 3.5, 1, 0.9}}};
  const auto m = map_pseudo(seg, det, AffineTransform2D::identity(), {4, 4});
  EXPECT_EQ(m.seg.classes.classes, seg.classes.classes);
  EXPECT_EQ(m.seg.confidence, seg.confidence);
  ASSERT_EQ(m.det.boxes.size(), 1u);
  EXPECT_EQ(m.det.boxes[0].x2, 3.0);
}

TEST(MapPseudo, FlipMirrors) {
  const auto l = planar(2, 3, 5, [](int c, int, int x) { return c == (x < 2 ? 1 : 0) ? 1.0 : 0.0; });
  const auto seg = seg_sigma<double>(l, 2, 3, 5);
  const DetPseudoLabel det{{{0, 0, 2, 3, 0, 0.8}}};
  const auto m = map_pseudo(seg, det, AffineTransform2D::hflip(5), {5, 3});
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x) EXPECT_EQ(m.seg.classes.at(y, x), seg.classes.at(y, 4 - x));
  ASSERT_EQ(m.det.boxes.size(), 1u);
  EXPECT_NEAR(m.det.boxes[0].x1, 3.0, 1e-12);
  EXPECT_NEAR(m.det.boxes[0].x2, 5.0, 1e-12);
}

TEST(MapPseudo, TranslateShiftsAndClips) {
  const auto l = planar(2, 8, 8, [](int c, int y, int) { return c == y % 2 ? 1.0 : 0.0; });
  const auto seg = seg_sigma<double>(l, 2, 8, 8);
  const DetPseudoLabel det{{{1, 1, 3, 3, 0, 0.8}, {4, 2, 7, 6, 1, 0.9}}};
  const auto m = map_pseudo(seg, det, AffineTransform2D::translation(5, 0), {8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      if (x < 5) {
        EXPECT_EQ(m.seg.classes.at(y, x), kIgnoreId);
        EXPECT_EQ(m.seg.confidence[static_cast<std::size_t>(y) * 8 + x], 0.0f);
      } else {
        EXPECT_EQ(m.seg.classes.at(y, x), seg.classes.at(y, x - 5));
      }
    }
  // First box moves to (6,1,8,3); second leaves the frame entirely.
  ASSERT_EQ(m.det.boxes.size(), 1u);
  EXPECT_NEAR(m.det.boxes[0].x1, 6.0, 1e-12);
  EXPECT_NEAR(m.det.boxes[0].x2, 8.0, 1e-12);
}

TEST(MapPseudo, RoundTripOnValidPixels) {
  Rng rng(7);
  const auto l = planar(3, 32, 32, [](int c, int y, int x) { return c == ((x / 8 + y / 8) % 3) ? 3.0 : 0.0; });
  const auto seg = seg_sigma<double>(l, 3, 32, 32);
  const DetPseudoLabel det{{{12, 12, 20, 18, 2, 0.7}}};
  for (int i = 0; i < 50; ++i) {
    const auto t = compose(AffineTransform2D::translation(rng.between(-3, 3), rng.between(-3, 3)),
                           rng.bernoulli(0.5) ? AffineTransform2D::hflip(32) : AffineTransform2D::identity());
    const auto fwd = map_pseudo(seg, det, t, {32, 32});
    const auto back = map_pseudo(fwd.seg, fwd.det, invert(t), {32, 32});
    for (std::size_t p = 0; p < seg.classes.classes.size(); ++p) {
      if (back.seg.classes.classes[p] != kIgnoreId) {
        EXPECT_EQ(back.seg.classes.classes[p], seg.classes.classes[p]);
      }
    }
    ASSERT_EQ(back.det.boxes.size(), 1u);
    EXPECT_NEAR(back.det.boxes[0].x1, 12.0, 1e-4);
    EXPECT_NEAR(back.det.boxes[0].y2, 18.0, 1e-4);
  }
}
