#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mtssl/error.hpp"

// Affine transform algebra and its action on images, segmentation maps and
// boxes.
//
// Conventions:
//   * Transforms act on pixel-center coordinates: pixel (i, j) sits at the
//     continuous point (x = j, y = i). The frame of a W x H image spans
//     [-0.5, W - 0.5] x [-0.5, H - 0.5] and its center is ((W-1)/2, (H-1)/2).
//   * Boxes use pixel-edge coordinates: column j covers [j, j + 1). A box
//     (x1, y1, x2, y2) is therefore shifted by +0.5 with respect to the
//     transform coordinates, and a horizontal flip maps it to
//     (W - x2, y1, W - x1, y2).
//   * Warping is inverse mapping: destination pixel p samples the source at
//     t^-1 p.
namespace mtssl {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDetEpsilon = 1e-12;
inline constexpr std::uint8_t kIgnoreId = 255;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct FrameSize {
  int width = 0;
  int height = 0;
  friend bool operator==(const FrameSize&, const FrameSize&) = default;
};

// 3x3 homogeneous matrix, row-major, mapping source (x, y, 1) to destination.
// The last row is always (0, 0, 1).
class AffineTransform2D {
 public:
  AffineTransform2D() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}

  // Upper two rows: [a b c; d e f].
  static AffineTransform2D from_rows(double a, double b, double c, double d, double e,
                                     double f) {
    AffineTransform2D t;
    t.m_ = {a, b, c, d, e, f, 0, 0, 1};
    return t;
  }

  static AffineTransform2D identity() { return {}; }
  static AffineTransform2D translation(double dx, double dy) {
    return from_rows(1, 0, dx, 0, 1, dy);
  }
  static AffineTransform2D scaling(double sx, double sy) { return from_rows(sx, 0, 0, 0, sy, 0); }
  static AffineTransform2D scaling(double s) { return scaling(s, s); }
  // Rotation by `deg` about `pivot`. Positive angles map +x towards +y, which
  // is clockwise on screen because y points down.
  static AffineTransform2D rotation(double deg, Point2 pivot = {}) {
    const double r = deg * kPi / 180.0;
    const double c = std::cos(r), s = std::sin(r);
    return from_rows(c, -s, pivot.x - c * pivot.x + s * pivot.y, s, c,
                     pivot.y - s * pivot.x - c * pivot.y);
  }
  // Mirror x about the vertical center line of a frame `width` pixels wide.
  static AffineTransform2D hflip(int width) { return from_rows(-1, 0, width - 1.0, 0, 1, 0); }

  double operator()(int r, int c) const { return m_[static_cast<std::size_t>(r * 3 + c)]; }
  const std::array<double, 9>& matrix() const { return m_; }

  double det() const { return m_[0] * m_[4] - m_[1] * m_[3]; }

  Point2 apply(Point2 p) const {
    return {m_[0] * p.x + m_[1] * p.y + m_[2], m_[3] * p.x + m_[4] * p.y + m_[5]};
  }

  bool is_identity(double tol = 0.0) const {
    const AffineTransform2D id;
    for (std::size_t i = 0; i < 9; ++i) {
      if (std::abs(m_[i] - id.m_[i]) > tol) return false;
    }
    return true;
  }

  double max_abs_diff(const AffineTransform2D& o) const {
    double d = 0.0;
    for (std::size_t i = 0; i < 9; ++i) d = std::max(d, std::abs(m_[i] - o.m_[i]));
    return d;
  }

 private:
  std::array<double, 9> m_;
};

// Applies `inner` first, then `outer`.
inline AffineTransform2D compose(const AffineTransform2D& outer, const AffineTransform2D& inner) {
  const auto& a = outer.matrix();
  const auto& b = inner.matrix();
  return AffineTransform2D::from_rows(
      a[0] * b[0] + a[1] * b[3], a[0] * b[1] + a[1] * b[4], a[0] * b[2] + a[1] * b[5] + a[2],
      a[3] * b[0] + a[4] * b[3], a[3] * b[1] + a[4] * b[4], a[3] * b[2] + a[4] * b[5] + a[5]);
}

inline AffineTransform2D invert(const AffineTransform2D& t) {
  const double det = t.det();
  if (!(std::abs(det) >= kDetEpsilon)) throw NonInvertible("|det| = " + std::to_string(det));
  const auto& m = t.matrix();
  const double ia = m[4] / det, ib = -m[1] / det;
  const double id = -m[3] / det, ie = m[0] / det;
  return AffineTransform2D::from_rows(ia, ib, -(ia * m[2] + ib * m[5]), id, ie,
                                      -(id * m[2] + ie * m[5]));
}

struct GeomParams {
  double rotate_deg = 0.0;
  Point2 translate_frac{};  // fraction of frame width / height
  Point2 shear_deg{};       // shear angles along x and y
  double scale = 1.0;
  bool hflip = false;
};

// Builds the transform about the frame center: flip, then scale, shear and
// rotation pivoted on the center, then a translation of frac * frame side.
inline AffineTransform2D from_params(const GeomParams& p, FrameSize frame) {
  if (!(p.scale > 0.0)) throw DegenerateTransform("scale must be positive");
  const Point2 c{(frame.width - 1) / 2.0, (frame.height - 1) / 2.0};
  const double shx = std::tan(p.shear_deg.x * kPi / 180.0);
  const double shy = std::tan(p.shear_deg.y * kPi / 180.0);
  AffineTransform2D t = AffineTransform2D::translation(-c.x, -c.y);
  if (p.hflip) t = compose(AffineTransform2D::scaling(-1.0, 1.0), t);
  t = compose(AffineTransform2D::scaling(p.scale), t);
  t = compose(AffineTransform2D::from_rows(1, shx, 0, shy, 1, 0), t);
  t = compose(AffineTransform2D::rotation(p.rotate_deg), t);
  t = compose(AffineTransform2D::translation(c.x + p.translate_frac.x * frame.width,
                                             c.y + p.translate_frac.y * frame.height),
              t);
  if (!(std::abs(t.det()) >= kDetEpsilon)) throw DegenerateTransform("det below 1e-12");
  return t;
}

// H x W x C float image, interleaved channels.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c, float value = 0.0f)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, value) {}

  FrameSize size() const { return {width, height}; }
  float& at(int y, int x, int ch) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }
  float at(int y, int x, int ch) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

struct ValidityMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> valid;

  ValidityMask() = default;
  ValidityMask(int h, int w, bool value = true)
      : height(h), width(w), valid(static_cast<std::size_t>(h) * w, value ? 1 : 0) {}

  bool at(int y, int x) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int y, int x, bool v) { valid[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  bool all() const {
    return std::all_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; });
  }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
  }
  friend bool operator==(const ValidityMask&, const ValidityMask&) = default;
};

inline ValidityMask operator&(const ValidityMask& a, const ValidityMask& b) {
  if (a.height != b.height || a.width != b.width) throw ShapeMismatch("mask sizes differ");
  ValidityMask out(a.height, a.width);
  for (std::size_t i = 0; i < out.valid.size(); ++i) out.valid[i] = a.valid[i] & b.valid[i];
  return out;
}

// Dense class-id grid; entries are class ids or `ignore_id`.
struct SegMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> classes;
  std::uint8_t ignore_id = kIgnoreId;

  SegMap() = default;
  SegMap(int h, int w, std::uint8_t value = 0)
      : height(h), width(w), classes(static_cast<std::size_t>(h) * w, value) {}

  std::uint8_t& at(int y, int x) { return classes[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return classes[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const SegMap&, const SegMap&) = default;
};

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  int class_id = 0;
  double score = 1.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1); }
  bool valid() const { return x1 < x2 && y1 < y2 && score >= 0.0 && score <= 1.0; }
};

using BoxSet = std::vector<Box>;

inline void validate(const BoxSet& boxes) {
  for (const auto& b : boxes) {
    if (!(b.x1 < b.x2 && b.y1 < b.y2)) throw DegenerateBox("box with non-positive side");
    if (!(b.score >= 0.0 && b.score <= 1.0)) throw OutOfRangeInput("box score outside [0,1]");
  }
}

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

enum class Interp { kNearest, kBilinear };

namespace detail {

inline int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

// Source location for every destination pixel, in scanline order.
template <typename Fn>
void for_each_source(const AffineTransform2D& t, FrameSize dst, Fn&& fn) {
  const auto inv = invert(t);
  for (int y = 0; y < dst.height; ++y) {
    for (int x = 0; x < dst.width; ++x) {
      fn(y, x, inv.apply({static_cast<double>(x), static_cast<double>(y)}));
    }
  }
}

inline bool inside(int sx, int sy, FrameSize src) {
  return sx >= 0 && sy >= 0 && sx < src.width && sy < src.height;
}

}  // namespace detail

struct WarpedImage {
  Image image;
  ValidityMask mask;
};

// Inverse-warps `img` into a `dst` frame (defaults to the source frame).
// Pixels whose source falls outside the frame take `fill` (one value per
// channel, or a single value broadcast to all channels) and are masked out.
inline WarpedImage warp_image(const Image& img, const AffineTransform2D& t,
                              Interp interp = Interp::kBilinear,
                              std::span<const float> fill = {}, FrameSize dst = {}) {
  if (dst.width == 0) dst = img.size();
  for (float v : img.data) {
    if (!std::isfinite(v)) throw NonFinite("image contains non-finite values");
  }
  const int nc = img.channels;
  std::vector<float> fills(static_cast<std::size_t>(nc), 0.0f);
  for (int c = 0; c < nc && !fill.empty(); ++c) {
    fills[static_cast<std::size_t>(c)] = fill[fill.size() == 1 ? 0 : static_cast<std::size_t>(c)];
  }
  WarpedImage out{Image(dst.height, dst.width, nc), ValidityMask(dst.height, dst.width, true)};
  const FrameSize src = img.size();
  detail::for_each_source(t, dst, [&](int y, int x, Point2 s) {
    const int nx = detail::round_half_up(s.x), ny = detail::round_half_up(s.y);
    if (!detail::inside(nx, ny, src)) {
      out.mask.set(y, x, false);
      for (int c = 0; c < nc; ++c) out.image.at(y, x, c) = fills[static_cast<std::size_t>(c)];
      return;
    }
    if (interp == Interp::kNearest) {
      for (int c = 0; c < nc; ++c) out.image.at(y, x, c) = img.at(ny, nx, c);
      return;
    }
    const double fx0 = std::floor(s.x), fy0 = std::floor(s.y);
    const double ax = s.x - fx0, ay = s.y - fy0;
    const int x0 = std::clamp(static_cast<int>(fx0), 0, src.width - 1);
    const int x1 = std::clamp(static_cast<int>(fx0) + 1, 0, src.width - 1);
    const int y0 = std::clamp(static_cast<int>(fy0), 0, src.height - 1);
    const int y1 = std::clamp(static_cast<int>(fy0) + 1, 0, src.height - 1);
    for (int c = 0; c < nc; ++c) {
      const double top = img.at(y0, x0, c) * (1.0 - ax) + img.at(y0, x1, c) * ax;
      const double bot = img.at(y1, x0, c) * (1.0 - ax) + img.at(y1, x1, c) * ax;
      out.image.at(y, x, c) = static_cast<float>(top * (1.0 - ay) + bot * ay);
    }
  });
  return out;
}

inline WarpedImage warp_image(const Image& img, const AffineTransform2D& t, Interp interp,
                              float fill, FrameSize dst = {}) {
  const float f[1] = {fill};
  return warp_image(img, t, interp, std::span<const float>(f, 1), dst);
}

// Nearest-neighbour inverse warp; out-of-frame pixels become ignore_id.
inline SegMap warp_segmap(const SegMap& seg, const AffineTransform2D& t, FrameSize dst = {}) {
  if (dst.width == 0) dst = {seg.width, seg.height};
  SegMap out(dst.height, dst.width, seg.ignore_id);
  out.ignore_id = seg.ignore_id;
  const FrameSize src{seg.width, seg.height};
  detail::for_each_source(t, dst, [&](int y, int x, Point2 s) {
    const int nx = detail::round_half_up(s.x), ny = detail::round_half_up(s.y);
    if (detail::inside(nx, ny, src)) out.at(y, x) = seg.at(ny, nx);
  });
  return out;
}

// Nearest-neighbour warp of a real-valued single-channel map.
inline std::vector<float> warp_scalar_map(std::span<const float> values, FrameSize src,
                                          const AffineTransform2D& t, float fill,
                                          FrameSize dst = {}) {
  if (dst.width == 0) dst = src;
  if (values.size() != static_cast<std::size_t>(src.width) * src.height) {
    throw ShapeMismatch("map size does not match frame");
  }
  std::vector<float> out(static_cast<std::size_t>(dst.width) * dst.height, fill);
  detail::for_each_source(t, dst, [&](int y, int x, Point2 s) {
    const int nx = detail::round_half_up(s.x), ny = detail::round_half_up(s.y);
    if (detail::inside(nx, ny, src)) {
      out[static_cast<std::size_t>(y) * dst.width + x] =
          values[static_cast<std::size_t>(ny) * src.width + nx];
    }
  });
  return out;
}

// Axis-aligned bounds of the transformed corners, without clipping.
inline Box transform_box(const Box& b, const AffineTransform2D& t) {
  const std::array<Point2, 4> corners{Point2{b.x1 - 0.5, b.y1 - 0.5}, Point2{b.x2 - 0.5, b.y1 - 0.5},
                                      Point2{b.x1 - 0.5, b.y2 - 0.5}, Point2{b.x2 - 0.5, b.y2 - 0.5}};
  Box out = b;
  out.x1 = out.y1 = INFINITY;
  out.x2 = out.y2 = -INFINITY;
  for (const auto& c : corners) {
    const Point2 p = t.apply(c);
    out.x1 = std::min(out.x1, p.x + 0.5);
    out.y1 = std::min(out.y1, p.y + 0.5);
    out.x2 = std::max(out.x2, p.x + 0.5);
    out.y2 = std::max(out.y2, p.y + 0.5);
  }
  return out;
}

inline constexpr double kDefaultMinBoxArea = 4.0;

// Transforms every box, clips it to the destination frame and drops boxes
// whose clipped area falls below `min_area_px`.
inline BoxSet warp_boxes(const BoxSet& boxes, const AffineTransform2D& t, FrameSize frame,
                         double min_area_px = kDefaultMinBoxArea) {
  BoxSet out;
  out.reserve(boxes.size());
  for (const auto& b : boxes) {
    Box w = transform_box(b, t);
    w.x1 = std::clamp(w.x1, 0.0, static_cast<double>(frame.width));
    w.x2 = std::clamp(w.x2, 0.0, static_cast<double>(frame.width));
    w.y1 = std::clamp(w.y1, 0.0, static_cast<double>(frame.height));
    w.y2 = std::clamp(w.y2, 0.0, static_cast<double>(frame.height));
    if (w.x1 < w.x2 && w.y1 < w.y2 && w.area() >= min_area_px) out.push_back(w);
  }
  return out;
}

}  // namespace mtssl
