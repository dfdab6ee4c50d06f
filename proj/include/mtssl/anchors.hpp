#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "mtssl/geometry.hpp"

namespace mtssl {

// Bound on the log-size deltas (a box between ~1/62 and ~62 times its anchor).
inline constexpr double kMaxLogScale = 4.135166556742356;

namespace detail {

template <typename T>
T clamp_log_scale(T v) {
  return std::clamp(v, static_cast<T>(-kMaxLogScale), static_cast<T>(kMaxLogScale));
}

}  // namespace detail

// One square anchor per cell of a grid x grid layout over a square frame of
// side `frame_side`, in pixel-edge coordinates. Anchors are ordered row-major
// (index = gy * grid + gx).
inline BoxSet make_anchors(int frame_side, int grid, double anchor_side) {
  BoxSet anchors;
  anchors.reserve(static_cast<std::size_t>(grid) * grid);
  const double stride = static_cast<double>(frame_side) / grid;
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const double cx = (gx + 0.5) * stride, cy = (gy + 0.5) * stride;
      anchors.push_back({cx - anchor_side / 2, cy - anchor_side / 2, cx + anchor_side / 2,
                         cy + anchor_side / 2, -1, 1.0});
    }
  }
  return anchors;
}

// Box (x1, y1, x2, y2) from offsets (dx, dy, dw, dh) about an anchor:
// center shifted by (dx, dy) anchor sides, size scaled by exp(dw), exp(dh).
template <typename T>
std::array<T, 4> decode_box(const Box& anchor, const std::array<T, 4>& d) {
  const T aw = static_cast<T>(anchor.width()), ah = static_cast<T>(anchor.height());
  const T cx = static_cast<T>((anchor.x1 + anchor.x2) / 2) + d[0] * aw;
  const T cy = static_cast<T>((anchor.y1 + anchor.y2) / 2) + d[1] * ah;
  const T w = aw * std::exp(detail::clamp_log_scale(d[2]));
  const T h = ah * std::exp(detail::clamp_log_scale(d[3]));
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

// Chain rule through decode_box: gradient w.r.t. the offsets given the
// gradient w.r.t. the decoded corners.
template <typename T>
std::array<T, 4> decode_box_backward(const Box& anchor, const std::array<T, 4>& d,
                                     const std::array<T, 4>& g_box) {
  const T aw = static_cast<T>(anchor.width()), ah = static_cast<T>(anchor.height());
  const bool clamp_w = std::abs(d[2]) > static_cast<T>(kMaxLogScale);
  const bool clamp_h = std::abs(d[3]) > static_cast<T>(kMaxLogScale);
  const T w = aw * std::exp(detail::clamp_log_scale(d[2]));
  const T h = ah * std::exp(detail::clamp_log_scale(d[3]));
  return {(g_box[0] + g_box[2]) * aw, (g_box[1] + g_box[3]) * ah,
          clamp_w ? T(0) : (g_box[2] - g_box[0]) * w / 2,
          clamp_h ? T(0) : (g_box[3] - g_box[1]) * h / 2};
}

}  // namespace mtssl
