#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "mtssl/error.hpp"
#include "mtssl/geometry.hpp"

// Segmentation and detection evaluation.
namespace mtssl {

// Rows are ground truth, columns prediction. Ignore pixels are not counted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes)
      : k_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {}

  int num_classes() const { return k_; }
  std::uint64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt * k_ + pred)]; }
  void add(int gt, int pred, std::uint64_t n = 1) {
    counts_[static_cast<std::size_t>(gt * k_ + pred)] += n;
  }

  void add(const SegMap& gt, const SegMap& pred) {
    if (gt.height != pred.height || gt.width != pred.width) throw ShapeMismatch("map sizes differ");
    for (std::size_t p = 0; p < gt.classes.size(); ++p) {
      const int g = gt.classes[p];
      if (g == gt.ignore_id) continue;
      const int q = pred.classes[p];
      if (g >= k_ || q >= k_) throw BadClassId("class id outside confusion matrix");
      add(g, q);
    }
  }

  void merge(const ConfusionMatrix& o) {
    if (o.k_ != k_) throw ShapeMismatch("confusion matrices differ in size");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

struct IouReport {
  std::vector<std::optional<double>> per_class;  // nullopt = empty union
  double mean = 0.0;
  double stddev = 0.0;  // population std over included classes
};

inline IouReport miou(const ConfusionMatrix& cm) {
  const int k = cm.num_classes();
  if (k < 2) throw OutOfRangeInput("need at least two classes");
  if (cm.total() == 0) throw EmptyMatrix("no evaluated pixels");
  IouReport r;
  std::vector<double> included;
  for (int c = 0; c < k; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::uint64_t uni = row + col - cm.at(c, c);
    if (uni == 0) {
      r.per_class.push_back(std::nullopt);
      continue;
    }
    const double v = static_cast<double>(cm.at(c, c)) / static_cast<double>(uni);
    r.per_class.push_back(v);
    included.push_back(v);
  }
  if (included.empty()) return r;
  double s = 0.0;
  for (double v : included) s += v;
  r.mean = s / static_cast<double>(included.size());
  double var = 0.0;
  for (double v : included) var += (v - r.mean) * (v - r.mean);
  r.stddev = std::sqrt(var / static_cast<double>(included.size()));
  return r;
}

// Ranked detections of one class with their match outcome.
struct PrCurve {
  std::vector<double> scores;
  std::vector<std::uint8_t> true_positive;
  std::size_t num_gt = 0;

  std::vector<double> precision() const {
    std::vector<double> p(scores.size());
    std::size_t tp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      tp += true_positive[i];
      p[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    }
    return p;
  }

  std::vector<double> recall() const {
    std::vector<double> r(scores.size());
    std::size_t tp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      tp += true_positive[i];
      r[i] = num_gt ? static_cast<double>(tp) / static_cast<double>(num_gt) : 0.0;
    }
    return r;
  }
};

inline constexpr int kApRecallPoints = 101;

// 101-point interpolated area under a precision/recall curve.
inline double interpolated_ap(const PrCurve& curve) {
  if (curve.num_gt == 0) return 0.0;
  const auto prec = curve.precision();
  const auto rec = curve.recall();
  // Running max of precision from the tail makes the interpolation a lookup.
  std::vector<double> env(prec.size());
  double best = 0.0;
  for (std::size_t i = prec.size(); i-- > 0;) env[i] = best = std::max(best, prec[i]);
  double sum = 0.0;
  std::size_t j = 0;
  for (int r = 0; r < kApRecallPoints; ++r) {
    const double level = r / 100.0;
    while (j < rec.size() && rec[j] < level) ++j;
    if (j < rec.size()) sum += env[j];
  }
  return sum / kApRecallPoints;
}

// Greedy score-ordered matching of one class across images. Detections are
// ranked by descending score; ties keep image order, then list order.
inline PrCurve build_pr_curve(std::span<const BoxSet> dets, std::span<const BoxSet> gts,
                              int class_id, double iou_threshold) {
  struct Ranked {
    double score;
    std::size_t image, index;
  };
  std::vector<Ranked> ranked;
  PrCurve curve;
  for (std::size_t im = 0; im < dets.size(); ++im) {
    for (std::size_t k = 0; k < dets[im].size(); ++k) {
      if (dets[im][k].class_id == class_id) ranked.push_back({dets[im][k].score, im, k});
    }
  }
  for (const auto& g : gts) {
    for (const auto& b : g) curve.num_gt += b.class_id == class_id;
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
  std::vector<std::vector<std::uint8_t>> used(gts.size());
  for (std::size_t im = 0; im < gts.size(); ++im) used[im].assign(gts[im].size(), 0);
  for (const auto& r : ranked) {
    const Box& d = dets[r.image][r.index];
    int best = -1;
    double best_iou = iou_threshold;
    if (r.image < gts.size()) {
      const auto& g = gts[r.image];
      for (std::size_t k = 0; k < g.size(); ++k) {
        if (g[k].class_id != class_id || used[r.image][k]) continue;
        const double v = iou(d, g[k]);
        if (v >= best_iou && (best < 0 || v > best_iou)) {
          best_iou = v;
          best = static_cast<int>(k);
        }
      }
    }
    if (best >= 0) used[r.image][static_cast<std::size_t>(best)] = 1;
    curve.scores.push_back(r.score);
    curve.true_positive.push_back(best >= 0 ? 1 : 0);
  }
  return curve;
}

inline std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

struct ApReport {
  std::map<int, double> per_class;  // averaged over thresholds; classes present in gt only
  double map = 0.0;
};

// AP per class (mean over IoU thresholds) and mAP. Classes without ground
// truth are excluded.
inline ApReport average_precision(std::span<const BoxSet> dets, std::span<const BoxSet> gts,
                                  std::span<const double> iou_thresholds) {
  if (dets.size() != gts.size()) throw ShapeMismatch("detections and ground truths differ in image count");
  std::vector<int> classes;
  for (const auto& g : gts)
    for (const auto& b : g)
      if (std::find(classes.begin(), classes.end(), b.class_id) == classes.end()) {
        classes.push_back(b.class_id);
      }
  std::sort(classes.begin(), classes.end());
  ApReport rep;
  if (classes.empty() || iou_thresholds.empty()) return rep;
  double total = 0.0;
  for (int c : classes) {
    double s = 0.0;
    for (double t : iou_thresholds) s += interpolated_ap(build_pr_curve(dets, gts, c, t));
    rep.per_class[c] = s / static_cast<double>(iou_thresholds.size());
    total += rep.per_class[c];
  }
  rep.map = total / static_cast<double>(classes.size());
  return rep;
}

inline double geometric_mean(double a, double b) { return std::sqrt(std::max(0.0, a) * std::max(0.0, b)); }

struct EvalPoint {
  long long step = 0;
  double miou = 0.0;
  double map = 0.0;
};

// Index of the entry maximizing sqrt(mIoU * mAP); the earliest wins ties.
inline std::size_t geometric_mean_select(std::span<const EvalPoint> history) {
  if (history.empty()) throw OutOfRangeInput("empty evaluation history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (geometric_mean(history[i].miou, history[i].map) >
        geometric_mean(history[best].miou, history[best].map)) {
      best = i;
    }
  }
  return best;
}

}  // namespace mtssl
