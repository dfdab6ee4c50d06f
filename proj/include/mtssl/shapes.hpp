#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>

#include "mtssl/data.hpp"
#include "mtssl/error.hpp"
#include "mtssl/geometry.hpp"
#include "mtssl/io.hpp"
#include "mtssl/rng.hpp"

// Synthetic multi-task data: textured backgrounds with non-overlapping
// circles, squares and triangles. Segmentation ids are 0 (background) and
// 1..3 (circle, square, triangle); detection classes are 0..2 in the same
// order.
namespace mtssl {

enum class ShapeKind { kCircle = 0, kSquare = 1, kTriangle = 2 };
inline constexpr int kShapeSegClasses = 4;
inline constexpr int kShapeDetClasses = 3;

struct ShapeInstance {
  ShapeKind kind = ShapeKind::kCircle;
  double cx = 0, cy = 0, r = 0;  // center and half-extent, pixel-edge coordinates

  // Analytic bounding box of the figure.
  Box box() const { return {cx - r, cy - r, cx + r, cy + r, static_cast<int>(kind), 1.0}; }

  bool contains(double px, double py) const {
    const double dx = px - cx, dy = py - cy;
    switch (kind) {
      case ShapeKind::kCircle: return dx * dx + dy * dy <= r * r;
      case ShapeKind::kSquare: return std::abs(dx) <= r && std::abs(dy) <= r;
      case ShapeKind::kTriangle: {
        // Apex at the top, base along the bottom edge of the box.
        if (dy < -r || dy > r) return false;
        const double half = r * (dy + r) / (2.0 * r);
        return std::abs(dx) <= half;
      }
    }
    return false;
  }
};

struct ShapesSample {
  Image image;
  SegMap mask;
  BoxSet boxes;  // tight bounds of each shape's rendered pixels
  std::vector<ShapeInstance> shapes;
};

// Shape-count distribution over 1..5.
inline constexpr std::array<double, 5> kShapeCountWeights{0.10, 0.15, 0.25, 0.25, 0.25};

inline ShapesSample render_shapes_sample(int side, Rng& rng) {
  if (side < 32) throw OutOfRangeInput("image side must be at least 32");
  ShapesSample s{Image(side, side, 3), SegMap(side, side, 0), {}, {}};

  // Background: two-color linear gradient, a low-frequency stripe pattern and
  // per-pixel noise.
  std::array<double, 3> c0, c1;
  for (auto& v : c0) v = rng.uniform(0.1, 0.9);
  for (auto& v : c1) v = rng.uniform(0.1, 0.9);
  const double angle = rng.uniform(0.0, 2.0 * kPi);
  const double freq = rng.uniform(0.05, 0.25), phase = rng.uniform(0.0, 2.0 * kPi);
  const double stripe_amp = rng.uniform(0.0, 0.08);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double u = ((x + 0.5) * std::cos(angle) + (y + 0.5) * std::sin(angle)) / side * 0.5 + 0.5;
      const double stripe = stripe_amp * std::sin(freq * (x - y) + phase);
      for (int c = 0; c < 3; ++c) {
        const double v = c0[static_cast<std::size_t>(c)] * (1 - u) + c1[static_cast<std::size_t>(c)] * u +
                         stripe + rng.uniform(-0.04, 0.04);
        s.image.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }

  double pick = rng.uniform();
  int count = 5;
  for (int k = 0; k < 5; ++k) {
    pick -= kShapeCountWeights[static_cast<std::size_t>(k)];
    if (pick < 0) {
      count = k + 1;
      break;
    }
  }
  const double rmin = 0.08 * side, rmax = 0.2 * side;
  for (int k = 0; k < count; ++k) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      ShapeInstance sh;
      sh.kind = static_cast<ShapeKind>(rng.below(3));
      sh.r = rng.uniform(rmin, rmax);
      sh.cx = rng.uniform(sh.r + 1.0, side - sh.r - 1.0);
      sh.cy = rng.uniform(sh.r + 1.0, side - sh.r - 1.0);
      const Box b = sh.box();
      bool clash = false;
      for (const auto& o : s.shapes) {
        const Box ob = o.box();
        if (b.x1 < ob.x2 + 2 && ob.x1 < b.x2 + 2 && b.y1 < ob.y2 + 2 && ob.y1 < b.y2 + 2) {
          clash = true;
          break;
        }
      }
      if (!clash) {
        s.shapes.push_back(sh);
        break;
      }
    }
  }

  for (const auto& sh : s.shapes) {
    // Color with clear contrast against the local background.
    double bg[3] = {0, 0, 0};
    const int px = static_cast<int>(sh.cx), py = static_cast<int>(sh.cy);
    for (int c = 0; c < 3; ++c) bg[c] = s.image.at(py, px, c);
    std::array<double, 3> color{};
    for (int attempt = 0; attempt < 50; ++attempt) {
      for (auto& v : color) v = rng.uniform(0.0, 1.0);
      double diff = 0;
      for (int c = 0; c < 3; ++c) diff = std::max(diff, std::abs(color[static_cast<std::size_t>(c)] - bg[c]));
      if (diff > 0.3) break;
    }
    const Box b = sh.box();
    Box tight{static_cast<double>(side), static_cast<double>(side), 0.0, 0.0, b.class_id, 1.0};
    for (int y = std::max(0, static_cast<int>(b.y1) - 1); y < std::min(side, static_cast<int>(b.y2) + 2); ++y) {
      for (int x = std::max(0, static_cast<int>(b.x1) - 1); x < std::min(side, static_cast<int>(b.x2) + 2); ++x) {
        if (!sh.contains(x + 0.5, y + 0.5)) continue;
        tight.x1 = std::min(tight.x1, static_cast<double>(x));
        tight.y1 = std::min(tight.y1, static_cast<double>(y));
        tight.x2 = std::max(tight.x2, x + 1.0);
        tight.y2 = std::max(tight.y2, y + 1.0);
        s.mask.at(y, x) = static_cast<std::uint8_t>(static_cast<int>(sh.kind) + 1);
        for (int c = 0; c < 3; ++c) {
          s.image.at(y, x, c) = static_cast<float>(
              std::clamp(color[static_cast<std::size_t>(c)] + rng.uniform(-0.03, 0.03), 0.0, 1.0));
        }
      }
    }
    s.boxes.push_back(tight);
  }
  return s;
}

inline ShapesSample shapes_sample(int side, std::uint64_t seed, std::size_t index) {
  Rng rng(seed, Stream::kShapes, {index});
  return render_shapes_sample(side, rng);
}

// Writes n samples plus a fully labeled manifest under `out_dir`.
inline void gen_shapes_dataset(std::size_t n, int side, std::uint64_t seed, const fs::path& out_dir) {
  if (side < 32) throw OutOfRangeInput("image side must be at least 32");
  std::error_code ec;
  for (const char* sub : {"images", "masks", "boxes"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }
  AnnotationManifest m = generate_scenario(n, ScenarioKind::kFull, n, n, Overlap::kFull, seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = shapes_sample(side, seed, i);
    const std::string& id = m.samples[i].id;
    write_image(image_path(out_dir, id), s.image);
    write_mask(mask_path(out_dir, id), s.mask);
    write_boxes(boxes_path(out_dir, id), s.boxes);
  }
  write_manifest(out_dir / "manifest.txt", m);
}

}  // namespace mtssl
