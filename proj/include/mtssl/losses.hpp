#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "mtssl/anchors.hpp"
#include "mtssl/error.hpp"
#include "mtssl/geometry.hpp"
#include "mtssl/pseudolabel.hpp"

// Training objectives. Every loss returns its value together with the
// gradient w.r.t. its inputs; the model's reverse pass consumes the latter.
//
// Layouts are planar (channel-major), matching the network outputs:
//   segmentation logits  K x H x W      -> index (k * H + y) * W + x
//   detection class      K x A          -> index k * A + a
//   detection offsets    4 x A          -> index j * A + a
namespace mtssl {

enum class Task { kSegmentation = 0, kDetection = 1 };
inline constexpr int kNumTasks = 2;
inline constexpr std::array<Task, 2> kTasks{Task::kSegmentation, Task::kDetection};

template <typename T>
struct LossGrad {
  T value{};
  std::vector<T> grad;
};

namespace detail {

template <typename T>
void check_finite(std::span<const T> v, const char* what) {
  for (T x : v) {
    if (!std::isfinite(static_cast<double>(x))) throw NonFinite(what);
  }
}

// log(sigmoid(z)) without overflow.
template <typename T>
T log_sigmoid(T z) {
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

template <typename T>
T sigmoid(T z) {
  return z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

}  // namespace detail

// Mean cross-entropy over non-ignored pixels. All-ignored maps give 0 with a
// zero gradient.
template <typename T>
LossGrad<T> ce_seg(std::span<const T> logits, int num_classes, const SegMap& target) {
  const std::size_t plane = static_cast<std::size_t>(target.height) * target.width;
  if (logits.size() != plane * static_cast<std::size_t>(num_classes)) {
    throw ShapeMismatch("logits do not match the target grid");
  }
  LossGrad<T> out{T(0), std::vector<T>(logits.size(), T(0))};
  std::size_t count = 0;
  for (std::size_t p = 0; p < plane; ++p) {
    const int c = target.classes[p];
    if (c == target.ignore_id) continue;
    if (c >= num_classes) throw BadClassId("class id " + std::to_string(c));
    ++count;
  }
  if (count == 0) return out;
  const T inv = T(1) / static_cast<T>(count);
  for (std::size_t p = 0; p < plane; ++p) {
    const int c = target.classes[p];
    if (c == target.ignore_id) continue;
    T mx = logits[p];
    for (int k = 1; k < num_classes; ++k) mx = std::max(mx, logits[static_cast<std::size_t>(k) * plane + p]);
    T denom = 0;
    for (int k = 0; k < num_classes; ++k) denom += std::exp(logits[static_cast<std::size_t>(k) * plane + p] - mx);
    const T log_denom = std::log(denom);
    out.value -= (logits[static_cast<std::size_t>(c) * plane + p] - mx - log_denom) * inv;
    for (int k = 0; k < num_classes; ++k) {
      const std::size_t i = static_cast<std::size_t>(k) * plane + p;
      const T prob = std::exp(logits[i] - mx - log_denom);
      out.grad[i] = (prob - (k == c ? T(1) : T(0))) * inv;
    }
  }
  return out;
}

struct AnchorMatch {
  enum class Kind { kNegative, kIgnored, kPositive };
  Kind kind = Kind::kNegative;
  int gt = -1;        // index into the ground-truth set for positives
  int class_id = -1;  // class of that ground truth
  double iou = 0.0;   // best IoU over ground truths
};

using AnchorAssignment = std::vector<AnchorMatch>;

inline constexpr double kPositiveIou = 0.5;
inline constexpr double kNegativeIou = 0.4;

// Each anchor goes to its best-IoU ground truth: positive at or above
// `pos_iou`, negative below `neg_iou`, ignored in between. Every ground truth
// additionally claims its best anchor as a positive.
inline AnchorAssignment match_anchors(const BoxSet& anchors, const BoxSet& gts,
                                      double pos_iou = kPositiveIou, double neg_iou = kNegativeIou) {
  if (anchors.empty()) throw OutOfRangeInput("no anchors");
  AnchorAssignment out(anchors.size());
  if (gts.empty()) return out;
  std::vector<double> gt_best(gts.size(), -1.0);
  std::vector<int> gt_best_anchor(gts.size(), -1);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[a], gts[g]);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
      if (v > gt_best[g]) {
        gt_best[g] = v;
        gt_best_anchor[g] = static_cast<int>(a);
      }
    }
    auto& m = out[a];
    m.iou = best_iou;
    if (best_iou >= pos_iou) {
      m = {AnchorMatch::Kind::kPositive, best, gts[static_cast<std::size_t>(best)].class_id, best_iou};
    } else if (best_iou < neg_iou) {
      m.kind = AnchorMatch::Kind::kNegative;
    } else {
      m.kind = AnchorMatch::Kind::kIgnored;
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gt_best[g] <= 0.0) continue;  // a gt overlapping no anchor cannot claim one
    auto& m = out[static_cast<std::size_t>(gt_best_anchor[g])];
    m.kind = AnchorMatch::Kind::kPositive;
    m.gt = static_cast<int>(g);
    m.class_id = gts[g].class_id;
    m.iou = gt_best[g];
  }
  return out;
}

struct FocalParams {
  double gamma = 2.0;
  double alpha = 0.25;
  bool use_alpha = true;  // false: every term weighted by 1
};

// Sigmoid focal loss over all non-ignored anchors, normalized by
// max(1, #positive anchors).
template <typename T>
LossGrad<T> focal(std::span<const T> cls_logits, int num_classes, const AnchorAssignment& assign,
                  const FocalParams& params = {}) {
  const std::size_t na = assign.size();
  if (cls_logits.size() != na * static_cast<std::size_t>(num_classes)) {
    throw ShapeMismatch("class logits do not match anchors");
  }
  detail::check_finite(cls_logits, "non-finite class logit");
  std::size_t npos = 0;
  for (const auto& m : assign) npos += m.kind == AnchorMatch::Kind::kPositive;
  const T norm = T(1) / static_cast<T>(std::max<std::size_t>(1, npos));
  const T gamma = static_cast<T>(params.gamma);
  LossGrad<T> out{T(0), std::vector<T>(cls_logits.size(), T(0))};
  for (std::size_t a = 0; a < na; ++a) {
    const auto& m = assign[a];
    if (m.kind == AnchorMatch::Kind::kIgnored) continue;
    for (int k = 0; k < num_classes; ++k) {
      const std::size_t i = static_cast<std::size_t>(k) * na + a;
      const bool y = m.kind == AnchorMatch::Kind::kPositive && m.class_id == k;
      const T z = y ? cls_logits[i] : -cls_logits[i];  // p_t = sigmoid(z)
      const T log_pt = detail::log_sigmoid(z);
      const T pt = detail::sigmoid(z);
      const T alpha_t =
          params.use_alpha ? static_cast<T>(y ? params.alpha : 1.0 - params.alpha) : T(1);
      const T mod = std::pow(T(1) - pt, gamma);
      out.value -= alpha_t * mod * log_pt * norm;
      // d/dz of -alpha_t (1-p)^g log p with p = sigmoid(z):
      //   alpha_t (1-p)^g (g p log p - (1 - p))
      const T dz = alpha_t * mod * (gamma * pt * log_pt - (T(1) - pt));
      out.grad[i] = (y ? dz : -dz) * norm;
    }
  }
  return out;
}

template <typename T>
struct BoxLossGrad {
  T value{};
  std::array<T, 4> grad{};
};

// 1 - GIoU between a predicted box (x1, y1, x2, y2) and a target.
template <typename T>
BoxLossGrad<T> giou_loss(const std::array<T, 4>& p, const Box& target) {
  const T tx1 = static_cast<T>(target.x1), ty1 = static_cast<T>(target.y1);
  const T tx2 = static_cast<T>(target.x2), ty2 = static_cast<T>(target.y2);
  if (!(p[2] > p[0] && p[3] > p[1]) || !(tx2 > tx1 && ty2 > ty1)) {
    throw DegenerateBox("box side <= 0");
  }
  const T pw = p[2] - p[0], ph = p[3] - p[1];
  const T ap = pw * ph, at = (tx2 - tx1) * (ty2 - ty1);
  const T ix = std::min(p[2], tx2) - std::max(p[0], tx1);
  const T iy = std::min(p[3], ty2) - std::max(p[1], ty1);
  const bool overlap = ix > 0 && iy > 0;
  const T inter = overlap ? ix * iy : T(0);
  const T uni = ap + at - inter;
  const T cw = std::max(p[2], tx2) - std::min(p[0], tx1);
  const T ch = std::max(p[3], ty2) - std::min(p[1], ty1);
  const T carea = cw * ch;
  const T iou_v = inter / uni;
  BoxLossGrad<T> out;
  out.value = T(2) - iou_v - uni / carea;

  std::array<T, 4> d_ap{-ph, -pw, ph, pw};
  std::array<T, 4> d_inter{};
  if (overlap) {
    d_inter = {p[0] > tx1 ? -iy : T(0), p[1] > ty1 ? -ix : T(0), p[2] < tx2 ? iy : T(0),
               p[3] < ty2 ? ix : T(0)};
  }
  const std::array<T, 4> d_c{p[0] < tx1 ? -ch : T(0), p[1] < ty1 ? -cw : T(0),
                             p[2] > tx2 ? ch : T(0), p[3] > ty2 ? cw : T(0)};
  for (int j = 0; j < 4; ++j) {
    const T d_uni = d_ap[j] - d_inter[j];
    const T d_iou = (d_inter[j] * uni - inter * d_uni) / (uni * uni);
    const T d_ratio = (d_uni * carea - uni * d_c[j]) / (carea * carea);
    out.grad[j] = -d_iou - d_ratio;
  }
  return out;
}

template <typename T>
struct DetLossGrad {
  T focal{};
  T giou{};
  T value{};
  std::size_t num_positive = 0;
  std::vector<T> grad_cls;
  std::vector<T> grad_deltas;
};

// Focal classification plus GIoU regression for one image. With
// `positive_only`, anchors matched to background are dropped entirely so an
// empty target set contributes nothing.
template <typename T>
DetLossGrad<T> detection_loss(std::span<const T> cls_logits, std::span<const T> deltas,
                              int num_classes, const BoxSet& anchors, const BoxSet& targets,
                              bool positive_only, const FocalParams& fp = {}) {
  const std::size_t na = anchors.size();
  if (deltas.size() != 4 * na) throw ShapeMismatch("box offsets do not match anchors");
  detail::check_finite(deltas, "non-finite box offset");
  AnchorAssignment assign = match_anchors(anchors, targets);
  if (positive_only) {
    for (auto& m : assign) {
      if (m.kind == AnchorMatch::Kind::kNegative) m.kind = AnchorMatch::Kind::kIgnored;
    }
  }
  DetLossGrad<T> out;
  auto f = focal(cls_logits, num_classes, assign, fp);
  out.focal = f.value;
  out.grad_cls = std::move(f.grad);
  out.grad_deltas.assign(deltas.size(), T(0));
  for (const auto& m : assign) out.num_positive += m.kind == AnchorMatch::Kind::kPositive;
  if (out.num_positive > 0) {
    const T inv = T(1) / static_cast<T>(out.num_positive);
    for (std::size_t a = 0; a < na; ++a) {
      if (assign[a].kind != AnchorMatch::Kind::kPositive) continue;
      const std::array<T, 4> d{deltas[a], deltas[na + a], deltas[2 * na + a], deltas[3 * na + a]};
      const auto box = decode_box(anchors[a], d);
      if (!(box[2] > box[0] && box[3] > box[1])) {
        throw DegenerateBox("decoded box collapsed; box offsets have diverged");
      }
      const auto g = giou_loss(box, targets[static_cast<std::size_t>(assign[a].gt)]);
      out.giou += g.value * inv;
      std::array<T, 4> gb;
      for (int j = 0; j < 4; ++j) gb[static_cast<std::size_t>(j)] = g.grad[static_cast<std::size_t>(j)] * inv;
      const auto gd = decode_box_backward(anchors[a], d, gb);
      for (std::size_t j = 0; j < 4; ++j) out.grad_deltas[j * na + a] = gd[j];
    }
  }
  out.value = out.focal + out.giou;
  return out;
}

// Sigmoid-shaped ramp exp(-5 (1 - t)^2), t = min(step / warmup, 1).
inline double lambda_ramp(long long step, long long warmup_steps) {
  if (warmup_steps < 1) throw OutOfRangeInput("warmup_steps must be >= 1");
  if (step >= warmup_steps) return 1.0;
  const double t = std::max(0.0, static_cast<double>(step) / static_cast<double>(warmup_steps));
  return std::exp(-5.0 * (1.0 - t) * (1.0 - t));
}

struct TaskWeights {
  std::array<double, kNumTasks> gamma{1.0, 1.0};
  std::array<double, kNumTasks> lambda_max{1.0, 1.0};
};

struct RampSchedule {
  long long warmup_steps = 1000;
};

struct TaskTerms {
  double supervised = 0.0;
  double unsupervised = 0.0;
  std::size_t num_labeled = 0;    // |B^l_t|
  std::size_t num_unlabeled = 0;  // |B^u_t|
  double gamma = 1.0;
  double lambda = 0.0;
};

struct LossReport {
  std::array<TaskTerms, kNumTasks> tasks{};
  double total = 0.0;

  TaskTerms& operator[](Task t) { return tasks[static_cast<std::size_t>(t)]; }
  const TaskTerms& operator[](Task t) const { return tasks[static_cast<std::size_t>(t)]; }
};

// Unsupervised weight of task t at `step`: lambda_max_t scaled by the ramp.
inline double task_lambda(const TaskWeights& w, Task t, long long step, const RampSchedule& ramp) {
  return w.lambda_max[static_cast<std::size_t>(t)] * lambda_ramp(step, ramp.warmup_steps);
}

// L = sum_t gamma_t (L_s,t + lambda_t(step) L_u,t).
inline LossReport total_loss(LossReport parts, const TaskWeights& w, long long step,
                             const RampSchedule& ramp) {
  parts.total = 0.0;
  for (Task t : kTasks) {
    auto& terms = parts[t];
    terms.gamma = w.gamma[static_cast<std::size_t>(t)];
    terms.lambda = task_lambda(w, t, step, ramp);
    parts.total += terms.gamma * (terms.supervised + terms.lambda * terms.unsupervised);
  }
  return parts;
}

// Per-sample views of the network heads, planar layouts as above.
template <typename T>
struct HeadView {
  std::span<const T> seg;
  std::span<const T> det_cls;
  std::span<const T> det_deltas;
};

template <typename T>
struct HeadGrad {
  std::vector<T> seg;
  std::vector<T> det_cls;
  std::vector<T> det_deltas;
};

struct HeadDims {
  int seg_classes = 4;
  int det_classes = 3;
  int height = 64;
  int width = 64;
};

struct SampleTargets {
  std::optional<SegMap> seg;
  std::optional<BoxSet> det;
};

namespace detail {

template <typename T>
void accumulate(std::vector<T>& dst, const std::vector<T>& src, T scale) {
  if (dst.size() != src.size()) dst.assign(src.size(), T(0));
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace detail

// L_s,t: mean over `members` (B^l_t) of the task objective against labels.
// Gradients of the batch mean are added into `grads` (scaled by `grad_scale`).
template <typename T>
double supervised_loss(Task task, const HeadDims& dims, const BoxSet& anchors,
                       std::span<const HeadView<T>> preds, std::span<const SampleTargets> labels,
                       std::span<const int> members, std::span<HeadGrad<T>> grads,
                       T grad_scale = T(1), const FocalParams& fp = {}) {
  if (members.empty()) return 0.0;
  const T inv = T(1) / static_cast<T>(members.size());
  double total = 0.0;
  for (int i : members) {
    const auto idx = static_cast<std::size_t>(i);
    const auto& lab = labels[idx];
    if (task == Task::kSegmentation) {
      if (!lab.seg) throw MissingLabel("sample " + std::to_string(i) + " has no segmentation label");
      auto r = ce_seg(preds[idx].seg, dims.seg_classes, *lab.seg);
      total += static_cast<double>(r.value);
      if (!grads.empty()) detail::accumulate(grads[idx].seg, r.grad, inv * grad_scale);
    } else {
      if (!lab.det) throw MissingLabel("sample " + std::to_string(i) + " has no detection label");
      auto r = detection_loss(preds[idx].det_cls, preds[idx].det_deltas, dims.det_classes, anchors,
                              *lab.det, false, fp);
      total += static_cast<double>(r.value);
      if (!grads.empty()) {
        detail::accumulate(grads[idx].det_cls, r.grad_cls, inv * grad_scale);
        detail::accumulate(grads[idx].det_deltas, r.grad_deltas, inv * grad_scale);
      }
    }
  }
  return total / static_cast<double>(members.size());
}

// L_u,t: mean over `members` (B^u_t) of the consistency objective against
// pseudo-labels already mapped into the prediction frame. Segmentation pixels
// that are invalid in `validity` are ignored; detection uses positive anchors
// only.
template <typename T>
double unsupervised_loss(Task task, const HeadDims& dims, const BoxSet& anchors,
                         std::span<const HeadView<T>> preds,
                         std::span<const MappedPseudoLabels> pseudo,
                         std::span<const ValidityMask> validity, std::span<const int> members,
                         std::span<HeadGrad<T>> grads, T grad_scale = T(1),
                         const FocalParams& fp = {}) {
  if (members.empty()) return 0.0;
  const T inv = T(1) / static_cast<T>(members.size());
  double total = 0.0;
  for (int i : members) {
    const auto idx = static_cast<std::size_t>(i);
    if (task == Task::kSegmentation) {
      SegMap target = pseudo[idx].seg.classes;
      if (target.height != dims.height || target.width != dims.width) {
        throw ShapeMismatch("pseudo-label grid differs from prediction grid");
      }
      if (!validity.empty()) {
        const auto& v = validity[idx];
        if (v.height != target.height || v.width != target.width) {
          throw ShapeMismatch("validity mask differs from prediction grid");
        }
        for (std::size_t p = 0; p < target.classes.size(); ++p) {
          if (!v.valid[p]) target.classes[p] = target.ignore_id;
        }
      }
      auto r = ce_seg(preds[idx].seg, dims.seg_classes, target);
      total += static_cast<double>(r.value);
      if (!grads.empty()) detail::accumulate(grads[idx].seg, r.grad, inv * grad_scale);
    } else {
      auto r = detection_loss(preds[idx].det_cls, preds[idx].det_deltas, dims.det_classes, anchors,
                              pseudo[idx].det.boxes, true, fp);
      total += static_cast<double>(r.value);
      if (!grads.empty()) {
        detail::accumulate(grads[idx].det_cls, r.grad_cls, inv * grad_scale);
        detail::accumulate(grads[idx].det_deltas, r.grad_deltas, inv * grad_scale);
      }
    }
  }
  return total / static_cast<double>(members.size());
}

}  // namespace mtssl
