#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mtssl/losses.hpp"
#include "mtssl/model.hpp"
#include "mtssl/pseudolabel.hpp"
#include "mtssl/rng.hpp"

// Helpers shared by the unit tests and the acceptance binary.
namespace mtssl::testing {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdRelTol = 1e-4;

// Relative error with max(|a|, |n|, 1e-6) in the denominator, so that entries
// near zero are compared absolutely.
inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

// Central difference of f with respect to the scalar `x` refers to.
inline double central_difference(const std::function<double()>& f, double& x, double h = kFdStep) {
  const double keep = x;
  x = keep + h;
  const double up = f();
  x = keep - h;
  const double dn = f();
  x = keep;
  return (up - dn) / (2 * h);
}

// A small double-precision multi-task problem: two labeled samples seen on
// their own view and two samples with fixed pseudo-labels seen on another.
struct EndToEndProblem {
  NetSpec spec;
  ParamStore<double> params;
  Tensor4<double> images;
  std::vector<SampleTargets> targets;
  std::vector<MappedPseudoLabels> pseudo;
  std::vector<ValidityMask> validity;
  TaskWeights weights;
  long long step = 0;
  RampSchedule ramp;

  static constexpr int kLabeled = 2;
  static constexpr int kUnlabeled = 2;

  static EndToEndProblem make(std::uint64_t seed, int side = 16) {
    EndToEndProblem p;
    p.spec.input_side = side;
    p.spec.widths = {6, 8, 8, 8};
    p.params = init_params<double>(p.spec, seed);
    Rng rng(mix64(seed ^ 0x7e57));
    // Perturb the near-zero head weights so every path carries signal.
    for (auto& prm : p.params) {
      for (auto& v : prm.value.data) v += 0.05 * rng.normal();
    }
    const int n = kLabeled + kUnlabeled;
    p.images = Tensor4<double>(n, 3, side, side);
    for (auto& v : p.images.data) v = rng.uniform(-2, 2);
    auto random_boxes = [&](int count) {
      BoxSet b;
      for (int i = 0; i < count; ++i) {
        const double w = rng.uniform(3, side * 0.6), h = rng.uniform(3, side * 0.6);
        const double x = rng.uniform(0, side - w), y = rng.uniform(0, side - h);
        b.push_back({x, y, x + w, y + h, static_cast<int>(rng.below(p.spec.det_classes)), 1.0});
      }
      return b;
    };
    auto random_seg = [&](double ignore_frac) {
      SegMap s(side, side, 0);
      for (auto& c : s.classes) {
        c = rng.uniform() < ignore_frac ? kIgnoreId
                                        : static_cast<std::uint8_t>(rng.below(p.spec.seg_classes));
      }
      return s;
    };
    p.targets.resize(n);
    p.pseudo.resize(n);
    p.validity.assign(n, ValidityMask(side, side, true));
    for (int i = 0; i < kLabeled; ++i) {
      p.targets[static_cast<std::size_t>(i)].seg = random_seg(0.1);
      p.targets[static_cast<std::size_t>(i)].det = random_boxes(1 + static_cast<int>(rng.below(2)));
    }
    for (int i = kLabeled; i < n; ++i) {
      auto& ps = p.pseudo[static_cast<std::size_t>(i)];
      ps.seg.classes = random_seg(0.0);
      ps.seg.confidence.assign(ps.seg.classes.classes.size(), 1.0f);
      ps.det.boxes = random_boxes(static_cast<int>(rng.below(3)));
      auto& v = p.validity[static_cast<std::size_t>(i)];
      for (auto& px : v.valid) px = rng.uniform() < 0.8;
    }
    p.weights.gamma = {1.0, 0.7};
    p.weights.lambda_max = {1.3, 0.9};
    p.step = 40;
    p.ramp.warmup_steps = 100;
    return p;
  }

  // Total loss; when `with_grad` is set, parameter gradients are left in
  // `params`.
  double loss(bool with_grad) {
    Graph<double> g(params);
    const auto out = forward(g, spec, images);
    const int n = images.n;
    std::vector<HeadView<double>> preds(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) preds[static_cast<std::size_t>(i)] = head_view(g, out, i);
    std::vector<HeadGrad<double>> grads(static_cast<std::size_t>(n));
    std::vector<int> lab, unl;
    for (int i = 0; i < kLabeled; ++i) lab.push_back(i);
    for (int i = kLabeled; i < n; ++i) unl.push_back(i);
    const HeadDims dims = spec.head_dims();
    const BoxSet anchors = spec.anchors();
    LossReport parts;
    for (Task t : kTasks) {
      const auto ti = static_cast<std::size_t>(t);
      const double gamma = weights.gamma[ti];
      const double scale = gamma * task_lambda(weights, t, step, ramp);
      auto span = with_grad ? std::span<HeadGrad<double>>(grads) : std::span<HeadGrad<double>>();
      parts[t].supervised = supervised_loss<double>(t, dims, anchors, preds, targets, lab, span, gamma);
      parts[t].unsupervised =
          unsupervised_loss<double>(t, dims, anchors, preds, pseudo, validity, unl, span, scale);
    }
    const double total = total_loss(parts, weights, step, ramp).total;
    if (with_grad) {
      auto seed_of = [&](Var v, auto member) {
        const auto& val = g.value(v);
        Tensor4<double> s(val.n, val.c, val.h, val.w);
        for (int i = 0; i < n; ++i) {
          const auto& src = grads[static_cast<std::size_t>(i)].*member;
          if (!src.empty()) std::copy(src.begin(), src.end(), s.sample(i).begin());
        }
        return s;
      };
      const auto gs = seed_of(out.seg, &HeadGrad<double>::seg);
      const auto gc = seed_of(out.det_cls, &HeadGrad<double>::det_cls);
      const auto gb = seed_of(out.det_box, &HeadGrad<double>::det_deltas);
      const std::pair<Var, const Tensor4<double>*> seeds[] = {
          {out.seg, &gs}, {out.det_cls, &gc}, {out.det_box, &gb}};
      g.backward(seeds);
    }
    return total;
  }
};

// Worst relative error of the analytic end-to-end parameter gradient over
// `per_tensor` random coordinates of every parameter tensor.
inline double end_to_end_gradient_error(std::uint64_t seed, int per_tensor = 3) {
  auto p = EndToEndProblem::make(seed);
  p.loss(true);
  Rng pick(mix64(seed ^ 0x7e58));
  double worst = 0.0;
  for (auto& prm : p.params) {
    for (int j = 0; j < per_tensor; ++j) {
      const std::size_t i = pick.below(prm.value.size());
      const double analytic = prm.grad.data[i];
      const double numeric = central_difference([&] { return p.loss(false); }, prm.value.data[i]);
      worst = std::max(worst, rel_error(analytic, numeric));
    }
  }
  return worst;
}

// Exhaustive average precision for one class at one IoU threshold: every
// detection is scored against every gt, the match is found by walking the
// ranking, and precision at each recall level 0, 0.01, ..., 1 is the best
// precision among ranks reaching that recall.
inline double brute_force_ap(const std::vector<BoxSet>& dets, const std::vector<BoxSet>& gts,
                             int class_id, double iou_threshold) {
  struct Ranked {
    double score;
    std::size_t image;
    std::size_t index;
  };
  std::vector<Ranked> ranked;
  std::size_t num_gt = 0;
  for (std::size_t im = 0; im < gts.size(); ++im) {
    for (const auto& g : gts[im]) num_gt += g.class_id == class_id;
    for (std::size_t d = 0; d < dets[im].size(); ++d) {
      if (dets[im][d].class_id == class_id) ranked.push_back({dets[im][d].score, im, d});
    }
  }
  if (num_gt == 0) return std::nan("");
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
  std::vector<std::vector<bool>> used(gts.size());
  for (std::size_t im = 0; im < gts.size(); ++im) used[im].assign(gts[im].size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const auto& d = dets[ranked[r].image][ranked[r].index];
    const auto& g = gts[ranked[r].image];
    double best = -1.0;
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (g[j].class_id != class_id || used[ranked[r].image][j]) continue;
      const double o = iou(d, g[j]);
      if (o > best) {
        best = o;
        best_j = j;
      }
    }
    if (best >= iou_threshold) {
      used[ranked[r].image][best_j] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
  }
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double level = k / 100.0;
    double best = 0.0;
    for (std::size_t r = 0; r < precision.size(); ++r) {
      if (recall[r] >= level) best = std::max(best, precision[r]);
    }
    sum += best;
  }
  return sum / 101.0;
}

}  // namespace mtssl::testing
