#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "mtssl/error.hpp"
#include "mtssl/geometry.hpp"

// Pseudo-labeling operators: argmax for segmentation, score threshold for
// detection, and the mapping of both into another view's frame.
namespace mtssl {

struct SegPseudoLabel {
  SegMap classes;
  std::vector<float> confidence;  // max softmax probability, 0 on ignore pixels
};

struct DetPseudoLabel {
  BoxSet boxes;
};

inline constexpr double kDetPseudoThreshold = 0.5;

// `logits` is planar: value of class k at pixel (y, x) is
// logits[(k * height + y) * width + x]. Ties resolve to the lowest class id.
template <typename T>
SegPseudoLabel seg_sigma(std::span<const T> logits, int num_classes, int height, int width) {
  if (num_classes < 2) throw OutOfRangeInput("need at least two classes");
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  if (logits.size() != plane * static_cast<std::size_t>(num_classes)) {
    throw ShapeMismatch("logit count does not match K x H x W");
  }
  SegPseudoLabel out{SegMap(height, width, 0), std::vector<float>(plane, 0.0f)};
  for (std::size_t p = 0; p < plane; ++p) {
    int best = 0;
    T best_v = logits[p];
    for (int k = 0; k < num_classes; ++k) {
      const T v = logits[static_cast<std::size_t>(k) * plane + p];
      if (!std::isfinite(static_cast<double>(v))) throw NonFinite("non-finite logit");
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    double denom = 0.0;
    for (int k = 0; k < num_classes; ++k) {
      denom += std::exp(static_cast<double>(logits[static_cast<std::size_t>(k) * plane + p] - best_v));
    }
    out.classes.classes[p] = static_cast<std::uint8_t>(best);
    out.confidence[p] = static_cast<float>(1.0 / denom);
  }
  return out;
}

// Keeps boxes with score >= threshold, preserving order.
inline DetPseudoLabel det_sigma(const BoxSet& preds, double threshold = kDetPseudoThreshold) {
  DetPseudoLabel out;
  for (const auto& b : preds) {
    if (b.score >= threshold) out.boxes.push_back(b);
  }
  return out;
}

struct MappedPseudoLabels {
  SegPseudoLabel seg;
  DetPseudoLabel det;
};

// Moves pseudo-labels through `t` into a frame of size `frame`.
inline MappedPseudoLabels map_pseudo(const SegPseudoLabel& seg, const DetPseudoLabel& det,
                                     const AffineTransform2D& t, FrameSize frame,
                                     double min_area_px = kDefaultMinBoxArea) {
  const FrameSize src{seg.classes.width, seg.classes.height};
  if (t.is_identity() && frame == src) return {seg, det};
  MappedPseudoLabels out;
  out.seg.classes = warp_segmap(seg.classes, t, frame);
  out.seg.confidence = warp_scalar_map(seg.confidence, src, t, 0.0f, frame);
  out.det.boxes = warp_boxes(det.boxes, t, frame, min_area_px);
  return out;
}

}  // namespace mtssl
