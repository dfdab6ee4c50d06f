#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "mtssl/losses.hpp"
#include "mtssl/rng.hpp"

using namespace mtssl;

namespace {

constexpr double kFdStep = 1e-5;
constexpr double kFdRelTol = 1e-4;

// Central differences of f at x, compared against an analytic gradient.
// Relative error uses max(|a|, |n|, 1e-6) so that near-zero entries are
// compared absolutely.
double fd_rel_error(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                    const std::vector<double>& analytic) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + kFdStep;
    const double up = f(x);
    x[i] = keep - kFdStep;
    const double dn = f(x);
    x[i] = keep;
    const double num = (up - dn) / (2 * kFdStep);
    const double den = std::max({std::abs(num), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, std::abs(num - analytic[i]) / den);
  }
  return worst;
}

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

SegMap random_target(Rng& rng, int h, int w, int k, double ignore_frac) {
  SegMap s(h, w, 0);
  for (auto& c : s.classes) c = rng.uniform() < ignore_frac ? kIgnoreId : static_cast<std::uint8_t>(rng.below(k));
  return s;
}

// Brute-force binary cross-entropy over sigmoid probabilities.
double bce(double z, bool y) {
  const double p = 1.0 / (1.0 + std::exp(-z));
  return -(y ? std::log(p) : std::log(1.0 - p));
}

}  // namespace

TEST(CeSeg, UniformLogits) {
  SegMap t(3, 3, 2);
  t.classes[4] = 0;
  const auto r = ce_seg<double>(std::vector<double>(4 * 9, 0.37), 4, t);
  EXPECT_NEAR(r.value, std::log(4.0), 1e-12);
}

TEST(CeSeg, SaturatedOneHot) {
  Rng rng(1);
  const SegMap t = random_target(rng, 4, 4, 3, 0.0);
  std::vector<double> l(3 * 16, 0.0);
  for (std::size_t p = 0; p < 16; ++p) l[t.classes[p] * 16 + p] = 1000.0;
  EXPECT_LT(ce_seg<double>(l, 3, t).value, 1e-6);
}

TEST(CeSeg, AllIgnoredIsZero) {
  const SegMap t(2, 2, kIgnoreId);
  const auto r = ce_seg<double>(std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8}, 2, t);
  EXPECT_EQ(r.value, 0.0);
  for (double g : r.grad) EXPECT_EQ(g, 0.0);
}

TEST(CeSeg, BadClass) {
  SegMap t(1, 2, 0);
  t.classes[1] = 3;
  EXPECT_THROW(ce_seg<double>(std::vector<double>(6, 0.0), 3, t), BadClassId);
}

TEST(CeSeg, ShiftInvariantAndNonnegative) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const SegMap t = random_target(rng, 3, 4, 4, 0.2);
    auto l = random_vec(rng, 4 * 12, -4, 4);
    const double a = ce_seg<double>(l, 4, t).value;
    for (std::size_t p = 0; p < 12; ++p) {
      const double s = rng.uniform(-50, 50);
      for (int k = 0; k < 4; ++k) l[static_cast<std::size_t>(k) * 12 + p] += s;
    }
    EXPECT_NEAR(ce_seg<double>(l, 4, t).value, a, 1e-9);
    EXPECT_GE(a, 0.0);
  }
}

TEST(CeSeg, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const SegMap t = random_target(rng, 4, 4, 4, 0.25);
    const auto l = random_vec(rng, 4 * 16, -3, 3);
    const auto r = ce_seg<double>(l, 4, t);
    auto f = [&](const std::vector<double>& x) { return ce_seg<double>(x, 4, t).value; };
    EXPECT_LT(fd_rel_error(f, l, r.grad), kFdRelTol) << "seed " << seed;
  }
}

TEST(MatchAnchors, Basic) {
  const BoxSet anchors{{0, 0, 10, 10}, {50, 50, 60, 60}};
  const BoxSet gts{{0, 0, 10, 10, 2}};
  const auto m = match_anchors(anchors, gts);
  EXPECT_EQ(m[0].kind, AnchorMatch::Kind::kPositive);
  EXPECT_EQ(m[0].class_id, 2);
  EXPECT_DOUBLE_EQ(m[0].iou, 1.0);
  EXPECT_EQ(m[1].kind, AnchorMatch::Kind::kNegative);
}

TEST(MatchAnchors, Thresholds) {
  // Second anchor is the best for the gt and is forced positive; the first
  // anchor sits between the thresholds.
  const BoxSet gts{{0, 0, 10, 19, 0}};
  const BoxSet anchors_pos{{0, 0, 10, 10}, {0, 0, 10, 18}};
  EXPECT_NEAR(iou(anchors_pos[0], gts[0]), 100.0 / 190.0, 1e-12);
  EXPECT_EQ(match_anchors(anchors_pos, gts)[0].kind, AnchorMatch::Kind::kPositive);
  const BoxSet gts2{{0, 0, 10, 22, 0}};
  EXPECT_NEAR(iou(anchors_pos[0], gts2[0]), 100.0 / 220.0, 1e-12);
  EXPECT_EQ(match_anchors(anchors_pos, gts2)[0].kind, AnchorMatch::Kind::kIgnored);
}

TEST(MatchAnchors, ForcedBestAnchor) {
  const BoxSet anchors{{0, 0, 4, 4}, {10, 10, 14, 14}};
  const BoxSet gts{{0, 0, 12, 12, 1}};  // IoU 16/144 with the first anchor
  const auto m = match_anchors(anchors, gts);
  EXPECT_EQ(m[0].kind, AnchorMatch::Kind::kPositive);
  EXPECT_EQ(m[0].gt, 0);
}

TEST(MatchAnchors, NoGtsAllNegative) {
  const auto m = match_anchors({{0, 0, 1, 1}, {1, 1, 2, 2}}, {});
  for (const auto& a : m) EXPECT_EQ(a.kind, AnchorMatch::Kind::kNegative);
}

TEST(Focal, ReducesToBce) {
  Rng rng(3);
  const int k = 3, na = 5;
  const auto l = random_vec(rng, k * na, -4, 4);
  AnchorAssignment as(na);
  as[1] = {AnchorMatch::Kind::kPositive, 0, 2, 0.7};
  as[3] = {AnchorMatch::Kind::kIgnored, -1, -1, 0.45};
  FocalParams p;
  p.gamma = 0.0;
  p.use_alpha = false;
  double expect = 0.0;
  for (int a = 0; a < na; ++a) {
    if (a == 3) continue;
    for (int c = 0; c < k; ++c) expect += bce(l[static_cast<std::size_t>(c * na + a)], a == 1 && c == 2);
  }
  EXPECT_NEAR(focal<double>(l, k, as, p).value, expect, 1e-9);
}

TEST(Focal, ClosedFormPositive) {
  const double z = std::log(0.9 / 0.1);  // sigmoid(z) = 0.9
  AnchorAssignment as(1);
  as[0] = {AnchorMatch::Kind::kPositive, 0, 0, 1.0};
  const auto r = focal<double>(std::vector<double>{z}, 1, as);
  EXPECT_NEAR(r.value, -0.25 * 0.01 * std::log(0.9), 1e-12);
  EXPECT_NEAR(r.value, 2.634e-4, 1e-7);
}

TEST(Focal, ClosedFormNegative) {
  const int k = 3;
  AnchorAssignment as(1);
  const auto r = focal<double>(std::vector<double>(k, 0.0), k, as);
  EXPECT_NEAR(r.value, k * (-0.75 * 0.25 * std::log(0.5)), 1e-12);
}

TEST(Focal, NonFinite) {
  AnchorAssignment as(2);
  EXPECT_THROW(focal<double>(std::vector<double>{0.0, INFINITY}, 1, as), NonFinite);
}

TEST(Focal, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const int k = 3, na = 6;
    const auto l = random_vec(rng, k * na, -3, 3);
    AnchorAssignment as(na);
    for (auto& m : as) {
      const auto r = rng.below(3);
      if (r == 0) m = {AnchorMatch::Kind::kPositive, 0, static_cast<int>(rng.below(k)), 0.6};
      if (r == 1) m.kind = AnchorMatch::Kind::kIgnored;
    }
    const auto res = focal<double>(l, k, as);
    auto f = [&](const std::vector<double>& x) { return focal<double>(x, k, as).value; };
    EXPECT_LT(fd_rel_error(f, l, res.grad), kFdRelTol) << "seed " << seed;
    EXPECT_GE(res.value, 0.0);
  }
}

TEST(Giou, ClosedForms) {
  EXPECT_NEAR(giou_loss<double>({1, 2, 5, 7}, {1, 2, 5, 7}).value, 0.0, 1e-15);
  EXPECT_NEAR(giou_loss<double>({0, 0, 2, 2}, {1, 1, 3, 3}).value, 1.0 - (1.0 / 7.0 - 2.0 / 9.0), 1e-9);
  EXPECT_NEAR(giou_loss<double>({0, 0, 1, 1}, {9, 9, 10, 10}).value, 1.98, 1e-12);
}

TEST(Giou, Degenerate) {
  EXPECT_THROW(giou_loss<double>({2, 0, 2, 1}, {0, 0, 1, 1}), DegenerateBox);
  EXPECT_THROW(giou_loss<double>({0, 0, 1, 1}, {0, 0, 1, 0}), DegenerateBox);
}

TEST(Giou, BoundsAndGradient) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(200 + seed);
    const double x = rng.uniform(0, 10), y = rng.uniform(0, 10);
    const std::vector<double> p{x, y, x + rng.uniform(1, 8), y + rng.uniform(1, 8)};
    const double tx = rng.uniform(0, 10), ty = rng.uniform(0, 10);
    const Box t{tx, ty, tx + rng.uniform(1, 8), ty + rng.uniform(1, 8)};
    auto f = [&](const std::vector<double>& v) { return giou_loss<double>({v[0], v[1], v[2], v[3]}, t).value; };
    const auto r = giou_loss<double>({p[0], p[1], p[2], p[3]}, t);
    EXPECT_GE(r.value, 0.0);
    EXPECT_LE(r.value, 2.0);
    EXPECT_LT(fd_rel_error(f, p, {r.grad.begin(), r.grad.end()}), kFdRelTol) << "seed " << seed;
  }
}

TEST(DetectionLoss, GradientThroughDecoding) {
  const BoxSet anchors = make_anchors(16, 2, 8.0);
  const int k = 2;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    const BoxSet gts{{rng.uniform(0, 6), rng.uniform(0, 6), rng.uniform(9, 15), rng.uniform(9, 15), 1}};
    const auto cls = random_vec(rng, k * anchors.size(), -2, 2);
    const auto del = random_vec(rng, 4 * anchors.size(), -0.3, 0.3);
    const auto r = detection_loss<double>(cls, del, k, anchors, gts, false);
    auto fc = [&](const std::vector<double>& x) { return detection_loss<double>(x, del, k, anchors, gts, false).value; };
    auto fd = [&](const std::vector<double>& x) { return detection_loss<double>(cls, x, k, anchors, gts, false).value; };
    EXPECT_LT(fd_rel_error(fc, cls, r.grad_cls), kFdRelTol) << "seed " << seed;
    EXPECT_LT(fd_rel_error(fd, del, r.grad_deltas), kFdRelTol) << "seed " << seed;
  }
}

TEST(DetectionLoss, PositiveOnlyEmptyIsZero) {
  const BoxSet anchors = make_anchors(16, 2, 8.0);
  Rng rng(5);
  const auto cls = random_vec(rng, 3 * 4, -2, 2);
  const auto del = random_vec(rng, 16, -1, 1);
  const auto r = detection_loss<double>(cls, del, 3, anchors, {}, true);
  EXPECT_EQ(r.value, 0.0);
  for (double g : r.grad_cls) EXPECT_EQ(g, 0.0);
  EXPECT_GT(detection_loss<double>(cls, del, 3, anchors, {}, false).value, 0.0);
}

TEST(DetectionLoss, DivergedOffsets) {
  const BoxSet anchors = make_anchors(16, 2, 8.0);
  const BoxSet gts{{0, 0, 8, 8, 0}};
  const std::vector<double> cls(anchors.size(), 0.0);
  std::vector<double> del(4 * anchors.size(), 0.0);
  del[0] = NAN;
  EXPECT_THROW(detection_loss<double>(cls, del, 1, anchors, gts, false), NonFinite);
  std::vector<float> big(4 * anchors.size(), 0.0f);
  for (std::size_t a = 0; a < anchors.size(); ++a) big[a] = 1e9f;
  const std::vector<float> clsf(anchors.size(), 0.0f);
  EXPECT_THROW(detection_loss<float>(clsf, big, 1, anchors, gts, false), DegenerateBox);
}

TEST(Ramp, ClosedForms) {
  EXPECT_NEAR(lambda_ramp(0, 1000), std::exp(-5.0), 1e-15);
  EXPECT_NEAR(lambda_ramp(0, 1000), 0.006738, 1e-6);
  EXPECT_NEAR(lambda_ramp(500, 1000), std::exp(-1.25), 1e-15);
  EXPECT_EQ(lambda_ramp(1000, 1000), 1.0);
  EXPECT_EQ(lambda_ramp(5000, 1000), 1.0);
  EXPECT_THROW(lambda_ramp(0, 0), OutOfRangeInput);
}

TEST(Ramp, Monotone) {
  double prev = 0.0;
  for (long long s = 0; s <= 1200; ++s) {
    const double v = lambda_ramp(s, 1000);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(TotalLoss, Arithmetic) {
  LossReport parts;
  parts[Task::kSegmentation].supervised = 0.5;
  parts[Task::kSegmentation].unsupervised = 0.1;
  parts[Task::kDetection].supervised = 0.3;
  parts[Task::kDetection].unsupervised = 0.2;
  const RampSchedule ramp{100};
  EXPECT_NEAR(total_loss(parts, {}, 100, ramp).total, 1.1, 1e-12);
  EXPECT_NEAR(total_loss(parts, {}, 0, ramp).total, 0.8 + std::exp(-5.0) * 0.3, 1e-12);
  TaskWeights w;
  w.gamma[1] = 0.0;
  EXPECT_NEAR(total_loss(parts, w, 100, ramp).total, 0.6, 1e-12);
}

TEST(TotalLoss, LinearInUnsupervised) {
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    LossReport parts;
    for (Task t : kTasks) {
      parts[t].supervised = rng.uniform();
      parts[t].unsupervised = rng.uniform();
    }
    TaskWeights w;
    w.gamma = {rng.uniform(0, 2), rng.uniform(0, 2)};
    w.lambda_max = {rng.uniform(0, 2), rng.uniform(0, 2)};
    const long long step = static_cast<long long>(rng.below(200));
    const RampSchedule ramp{100};
    const auto a = total_loss(parts, w, step, ramp);
    auto bumped = parts;
    bumped[Task::kDetection].unsupervised += 1.0;
    const auto b = total_loss(bumped, w, step, ramp);
    EXPECT_NEAR(b.total - a.total, w.gamma[1] * w.lambda_max[1] * lambda_ramp(step, 100), 1e-12);
    double sum = 0.0;
    for (Task t : kTasks) sum += a[t].gamma * (a[t].supervised + a[t].lambda * a[t].unsupervised);
    EXPECT_NEAR(a.total, sum, 1e-9);
  }
}

TEST(SupervisedLoss, EmptyAndMean) {
  const HeadDims dims{2, 1, 1, 2};
  const BoxSet anchors{{0, 0, 1, 1}};
  // Sample 0: uniform logits (ln 2 per pixel); sample 1: saturated correct.
  const std::vector<double> seg0(4, 0.0), seg1{1000, 1000, 0, 0}, cls(1, 0.0), del(4, 0.0);
  std::vector<HeadView<double>> preds{{seg0, cls, del}, {seg1, cls, del}};
  std::vector<SampleTargets> labels(2);
  labels[0].seg = SegMap(1, 2, 0);
  labels[1].seg = SegMap(1, 2, 0);
  EXPECT_EQ(supervised_loss<double>(Task::kSegmentation, dims, anchors, preds, labels, {}, {}), 0.0);
  const std::vector<int> both{0, 1};
  EXPECT_NEAR(supervised_loss<double>(Task::kSegmentation, dims, anchors, preds, labels, both, {}),
              std::log(2.0) / 2, 1e-12);
  const std::vector<int> one{1};
  EXPECT_LT(supervised_loss<double>(Task::kSegmentation, dims, anchors, preds, labels, one, {}), 1e-6);
  EXPECT_THROW(supervised_loss<double>(Task::kDetection, dims, anchors, preds, labels, one, {}), MissingLabel);
}

TEST(SupervisedLoss, MeanOfLnFourAndZero) {
  const HeadDims dims{4, 1, 1, 1};
  const BoxSet anchors{{0, 0, 1, 1}};
  const std::vector<double> u(4, 0.0), s{1000, 0, 0, 0}, cls(1, 0.0), del(4, 0.0);
  std::vector<HeadView<double>> preds{{u, cls, del}, {s, cls, del}};
  std::vector<SampleTargets> labels(2);
  labels[0].seg = labels[1].seg = SegMap(1, 1, 0);
  const std::vector<int> both{0, 1};
  EXPECT_NEAR(supervised_loss<double>(Task::kSegmentation, dims, anchors, preds, labels, both, {}),
              std::log(4.0) / 2, 1e-12);
}

TEST(UnsupervisedLoss, EmptyTargets) {
  const HeadDims dims{3, 2, 4, 4};
  const BoxSet anchors = make_anchors(4, 1, 2.0);
  Rng rng(7);
  const auto seg = random_vec(rng, 3 * 16, -1, 1);
  const auto cls = random_vec(rng, 2, -1, 1);
  const auto del = random_vec(rng, 4, -1, 1);
  std::vector<HeadView<double>> preds{{seg, cls, del}};
  std::vector<MappedPseudoLabels> pseudo(1);
  pseudo[0].seg.classes = SegMap(4, 4, kIgnoreId);
  const std::vector<int> m{0};
  EXPECT_EQ(unsupervised_loss<double>(Task::kSegmentation, dims, anchors, preds, pseudo, {}, m, {}), 0.0);
  EXPECT_EQ(unsupervised_loss<double>(Task::kDetection, dims, anchors, preds, pseudo, {}, m, {}), 0.0);
  pseudo[0].seg.classes = SegMap(3, 4, 0);
  EXPECT_THROW(unsupervised_loss<double>(Task::kSegmentation, dims, anchors, preds, pseudo, {}, m, {}),
               ShapeMismatch);
}

TEST(UnsupervisedLoss, SelfConsistencyAndValidity) {
  const HeadDims dims{3, 2, 4, 4};
  const BoxSet anchors = make_anchors(4, 1, 2.0);
  Rng rng(8);
  auto seg = random_vec(rng, 3 * 16, -1, 1);
  // Confident teacher == student: loss near zero.
  for (std::size_t p = 0; p < 16; ++p) seg[(p % 3) * 16 + p] += 40.0;
  const std::vector<double> cls(2, 0.0), del(4, 0.0);
  std::vector<HeadView<double>> preds{{seg, cls, del}};
  std::vector<MappedPseudoLabels> pseudo(1);
  pseudo[0].seg = seg_sigma<double>(seg, 3, 4, 4);
  const std::vector<int> m{0};
  EXPECT_LT(unsupervised_loss<double>(Task::kSegmentation, dims, anchors, preds, pseudo, {}, m, {}), 1e-9);
  // Invalid pixels are excluded from the mean.
  std::vector<ValidityMask> valid{ValidityMask(4, 4, false)};
  pseudo[0].seg.classes.classes.assign(16, 0);
  valid[0].set(0, 0, true);
  const double one = unsupervised_loss<double>(Task::kSegmentation, dims, anchors, preds, pseudo, valid, m, {});
  SegMap only(4, 4, kIgnoreId);
  only.classes[0] = 0;
  EXPECT_NEAR(one, ce_seg<double>(seg, 3, only).value, 1e-12);
}
