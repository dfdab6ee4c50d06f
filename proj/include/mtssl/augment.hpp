#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mtssl/error.hpp"
#include "mtssl/geometry.hpp"
#include "mtssl/rng.hpp"

// Weak and strong augmentation pipelines. Every sampled augmentation is kept
// as an AugRecord so its geometric part can later be inverted to move
// pseudo-labels between views.
namespace mtssl {

enum class AugMode { kInvariantOnly, kEquivariant };

enum class PhotoKind {
  kAutoContrast,
  kEqualize,
  kInvert,
  kSolarize,
  kPosterize,
  kSaturation,
  kContrast,
  kBrightness,
  kSharpness,
};

inline constexpr std::array<PhotoKind, 9> kPhotoKinds{
    PhotoKind::kAutoContrast, PhotoKind::kEqualize,   PhotoKind::kInvert,
    PhotoKind::kSolarize,     PhotoKind::kPosterize,  PhotoKind::kSaturation,
    PhotoKind::kContrast,     PhotoKind::kBrightness, PhotoKind::kSharpness};

enum class GeomKind { kShearX, kShearY, kTranslateX, kTranslateY, kRotate, kHFlip };

inline constexpr std::array<GeomKind, 6> kGeomKinds{GeomKind::kShearX,     GeomKind::kShearY,
                                                    GeomKind::kTranslateX, GeomKind::kTranslateY,
                                                    GeomKind::kRotate,     GeomKind::kHFlip};

struct MagnitudeRange {
  double lo = 0.0;
  double hi = 0.0;
};

inline MagnitudeRange magnitude_range(PhotoKind k) {
  switch (k) {
    case PhotoKind::kSolarize: return {0.1, 1.0};
    case PhotoKind::kPosterize: return {4.0, 8.0};
    case PhotoKind::kSaturation:
    case PhotoKind::kContrast:
    case PhotoKind::kBrightness:
    case PhotoKind::kSharpness: return {0.1, 1.9};
    default: return {0.0, 0.0};
  }
}

inline MagnitudeRange magnitude_range(GeomKind k) {
  switch (k) {
    case GeomKind::kShearX:
    case GeomKind::kShearY: return {-17.0, 17.0};
    case GeomKind::kTranslateX:
    case GeomKind::kTranslateY: return {-0.15, 0.15};
    case GeomKind::kRotate: return {-30.0, 30.0};
    case GeomKind::kHFlip: return {0.0, 0.0};
  }
  return {};
}

inline std::string to_string(PhotoKind k) {
  static const char* names[] = {"autocontrast", "equalize",   "invert",
                                "solarize",     "posterize",  "saturation",
                                "contrast",     "brightness", "sharpness"};
  return names[static_cast<int>(k)];
}

inline std::string to_string(GeomKind k) {
  static const char* names[] = {"shear_x", "shear_y", "translate_x",
                                "translate_y", "rotate", "hflip"};
  return names[static_cast<int>(k)];
}

struct PhotometricOp {
  PhotoKind kind = PhotoKind::kInvert;
  double magnitude = 0.0;
};

struct GeometricOp {
  GeomKind kind = GeomKind::kRotate;
  double magnitude = 0.0;
};

struct Rect {
  int x = 0, y = 0, w = 0, h = 0;
};

enum class AugSource { kWeak, kStrong };

struct AugRecord {
  AffineTransform2D geometric;
  std::vector<GeometricOp> geometric_ops;  // provenance of strong geometry
  std::vector<PhotometricOp> photometric;
  std::optional<Rect> cutout;
  AugSource source = AugSource::kWeak;
  FrameSize frame{};  // output frame of this view
};

struct AugConfig {
  double resize_scale_min = 0.5;
  double resize_scale_max = 2.0;
  int crop_size = 64;
  double hflip_prob = 0.5;
  int randaug_n = 2;
  double cutout_area_min = 0.10;
  double cutout_area_max = 0.30;
  AugMode mode = AugMode::kEquivariant;
};

// Range of crop offsets along one axis for an image side `side` rescaled by
// `scale`. When the rescaled image is smaller than the crop the offset is
// negative and the crop is padded.
inline MagnitudeRange crop_offset_range(double scale, int side, int crop) {
  const double extent = scale * side - crop;
  return extent >= 0.0 ? MagnitudeRange{0.0, extent} : MagnitudeRange{extent, 0.0};
}

// Transform that resizes an image by `scale` (pixel-area preserving mapping
// x' = s (x + 0.5) - 0.5).
inline AffineTransform2D resize_transform(double scale) {
  return AffineTransform2D::from_rows(scale, 0, 0.5 * scale - 0.5, 0, scale, 0.5 * scale - 0.5);
}

// Weak view: resize, optional horizontal flip of the resized frame, crop.
inline AugRecord sample_weak(Rng& rng, const AugConfig& cfg, FrameSize img_size) {
  if (img_size.width <= 0 || img_size.height <= 0) throw OutOfRangeInput("empty image size");
  const double scale = rng.uniform(cfg.resize_scale_min, cfg.resize_scale_max);
  const bool flip = rng.bernoulli(cfg.hflip_prob);
  const auto rx = crop_offset_range(scale, img_size.width, cfg.crop_size);
  const auto ry = crop_offset_range(scale, img_size.height, cfg.crop_size);
  const double ox = rng.uniform(rx.lo, rx.hi);
  const double oy = rng.uniform(ry.lo, ry.hi);

  AffineTransform2D t = resize_transform(scale);
  if (flip) {
    const double w = scale * img_size.width;
    t = compose(AffineTransform2D::from_rows(-1, 0, w - 1.0, 0, 1, 0), t);
  }
  t = compose(AffineTransform2D::translation(-ox, -oy), t);

  AugRecord rec;
  rec.geometric = t;
  rec.source = AugSource::kWeak;
  rec.frame = {cfg.crop_size, cfg.crop_size};
  return rec;
}

inline AffineTransform2D geometric_op_transform(const GeometricOp& op, FrameSize frame) {
  GeomParams p;
  switch (op.kind) {
    case GeomKind::kShearX: p.shear_deg.x = op.magnitude; break;
    case GeomKind::kShearY: p.shear_deg.y = op.magnitude; break;
    case GeomKind::kTranslateX: p.translate_frac.x = op.magnitude; break;
    case GeomKind::kTranslateY: p.translate_frac.y = op.magnitude; break;
    case GeomKind::kRotate: p.rotate_deg = op.magnitude; break;
    case GeomKind::kHFlip: p.hflip = true; break;
  }
  return from_params(p, frame);
}

// Strong view: RandAugment with `randaug_n` ops drawn uniformly (with
// replacement) from the pool, plus a cutout square. The returned geometry is
// the extra transform on top of the weak view: identity in invariant-only
// mode. Use pair_with_weak() to obtain the full strong record.
inline AugRecord sample_strong(Rng& rng, const AugConfig& cfg) {
  const FrameSize frame{cfg.crop_size, cfg.crop_size};
  const std::size_t pool =
      kPhotoKinds.size() + (cfg.mode == AugMode::kEquivariant ? kGeomKinds.size() : 0);
  AugRecord rec;
  rec.source = AugSource::kStrong;
  rec.frame = frame;
  for (int i = 0; i < cfg.randaug_n; ++i) {
    const auto pick = rng.below(pool);
    if (pick < kPhotoKinds.size()) {
      const PhotoKind kind = kPhotoKinds[pick];
      const auto r = magnitude_range(kind);
      rec.photometric.push_back({kind, rng.uniform(r.lo, r.hi)});
    } else {
      const GeomKind kind = kGeomKinds[pick - kPhotoKinds.size()];
      const auto r = magnitude_range(kind);
      GeometricOp op{kind, rng.uniform(r.lo, r.hi)};
      rec.geometric = compose(geometric_op_transform(op, frame), rec.geometric);
      rec.geometric_ops.push_back(op);
    }
  }
  const double frac = rng.uniform(cfg.cutout_area_min, cfg.cutout_area_max);
  const int side = std::clamp(
      static_cast<int>(std::lround(std::sqrt(frac * frame.width * frame.height))), 1,
      std::min(frame.width, frame.height));
  rec.cutout = Rect{static_cast<int>(rng.below(static_cast<std::uint64_t>(frame.width - side + 1))),
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(frame.height - side + 1))),
                    side, side};
  return rec;
}

// Full strong record for a source image: the strong extra geometry applied on
// top of the weak geometry.
inline AugRecord pair_with_weak(const AugRecord& weak, AugRecord strong) {
  strong.geometric = compose(strong.geometric, weak.geometric);
  return strong;
}

// Maps outputs of the weak view into the strong view's frame.
inline AffineTransform2D relabel_transform(const AugRecord& weak, const AugRecord& strong) {
  return compose(strong.geometric, invert(weak.geometric));
}

namespace detail {

inline float luma(const Image& img, int y, int x) {
  return 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
}

// Blend `degenerate` and `img`: factor 0 gives the degenerate image, 1 the
// original.
inline void blend_into(Image& img, const Image& degenerate, double factor) {
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double d = degenerate.data[i];
    img.data[i] = static_cast<float>(d + factor * (img.data[i] - d));
  }
}

inline int to_bin(float v) { return std::clamp(static_cast<int>(std::lround(v * 255.0f)), 0, 255); }

}  // namespace detail

inline constexpr float kRangeTolerance = 1e-6f;

// Applies one photometric op to an image with values in [0, 1]; output is
// clamped to [0, 1].
inline Image apply_photometric(const Image& img, const PhotometricOp& op) {
  for (float v : img.data) {
    if (!(v >= -kRangeTolerance && v <= 1.0f + kRangeTolerance)) {
      throw OutOfRangeInput("pixel value outside [0,1]");
    }
  }
  Image out = img;
  const int nc = img.channels;
  const double m = op.magnitude;
  switch (op.kind) {
    case PhotoKind::kInvert:
      for (auto& v : out.data) v = 1.0f - v;
      break;
    case PhotoKind::kSolarize:
      // Values at or below the threshold are kept, so threshold 1 is a no-op.
      for (auto& v : out.data) v = v <= m ? v : 1.0f - v;
      break;
    case PhotoKind::kPosterize: {
      const int bits = std::clamp(static_cast<int>(std::lround(m)), 1, 8);
      const double levels = std::ldexp(1.0, bits) - 1.0;
      for (auto& v : out.data) v = static_cast<float>(std::floor(v * levels + 1e-6) / levels);
      break;
    }
    case PhotoKind::kBrightness: {
      const Image black(img.height, img.width, nc, 0.0f);
      detail::blend_into(out, black, m);
      break;
    }
    case PhotoKind::kContrast: {
      double mean = 0.0;
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) mean += detail::luma(img, y, x);
      mean /= static_cast<double>(img.height) * img.width;
      const Image flat(img.height, img.width, nc, static_cast<float>(mean));
      detail::blend_into(out, flat, m);
      break;
    }
    case PhotoKind::kSaturation: {
      Image gray(img.height, img.width, nc);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          const float l = detail::luma(img, y, x);
          for (int c = 0; c < nc; ++c) gray.at(y, x, c) = l;
        }
      detail::blend_into(out, gray, m);
      break;
    }
    case PhotoKind::kSharpness: {
      // Degenerate image: 3x3 smoothing (center weight 5), borders unchanged.
      Image blur = img;
      for (int y = 1; y + 1 < img.height; ++y)
        for (int x = 1; x + 1 < img.width; ++x)
          for (int c = 0; c < nc; ++c) {
            double s = 4.0 * img.at(y, x, c);
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) s += img.at(y + dy, x + dx, c);
            blur.at(y, x, c) = static_cast<float>(s / 13.0);
          }
      detail::blend_into(out, blur, m);
      break;
    }
    case PhotoKind::kAutoContrast:
      for (int c = 0; c < nc; ++c) {
        float lo = 1.0f, hi = 0.0f;
        for (int i = c; i < static_cast<int>(img.data.size()); i += nc) {
          lo = std::min(lo, img.data[static_cast<std::size_t>(i)]);
          hi = std::max(hi, img.data[static_cast<std::size_t>(i)]);
        }
        if (hi <= lo) continue;
        for (int i = c; i < static_cast<int>(out.data.size()); i += nc) {
          auto& v = out.data[static_cast<std::size_t>(i)];
          v = (v - lo) / (hi - lo);
        }
      }
      break;
    case PhotoKind::kEqualize:
      for (int c = 0; c < nc; ++c) {
        std::array<std::size_t, 256> hist{};
        for (int i = c; i < static_cast<int>(img.data.size()); i += nc) {
          ++hist[static_cast<std::size_t>(detail::to_bin(img.data[static_cast<std::size_t>(i)]))];
        }
        std::array<std::size_t, 256> cdf{};
        std::size_t acc = 0;
        for (std::size_t b = 0; b < 256; ++b) cdf[b] = acc += hist[b];
        const std::size_t total = acc;
        std::size_t cdf_min = 0;
        for (std::size_t b = 0; b < 256; ++b) {
          if (hist[b] != 0) {
            cdf_min = cdf[b];
            break;
          }
        }
        if (total == cdf_min) continue;
        for (int i = c; i < static_cast<int>(out.data.size()); i += nc) {
          auto& v = out.data[static_cast<std::size_t>(i)];
          const auto b = static_cast<std::size_t>(detail::to_bin(v));
          v = static_cast<float>(
              std::round(static_cast<double>(cdf[b] - cdf_min) / (total - cdf_min) * 255.0) /
              255.0);
        }
      }
      break;
  }
  for (auto& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

// ImageNet statistics; also the out-of-frame fill so that padded pixels
// normalize to zero.
inline constexpr std::array<float, 3> kChannelMean{0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kChannelStd{0.229f, 0.224f, 0.225f};

inline void apply_cutout(Image& img, const Rect& r) {
  std::vector<double> mean(static_cast<std::size_t>(img.channels), 0.0);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) mean[static_cast<std::size_t>(c)] += img.at(y, x, c);
  for (auto& m : mean) m /= static_cast<double>(img.height) * img.width;
  for (int y = std::max(0, r.y); y < std::min(img.height, r.y + r.h); ++y)
    for (int x = std::max(0, r.x); x < std::min(img.width, r.x + r.w); ++x)
      for (int c = 0; c < img.channels; ++c)
        img.at(y, x, c) = static_cast<float>(mean[static_cast<std::size_t>(c)]);
}

// Geometric warp, then photometric ops in order, then cutout. The validity
// mask comes from the warp only.
inline WarpedImage apply_record(const Image& img, const AugRecord& rec) {
  const FrameSize frame = rec.frame.width > 0 ? rec.frame : img.size();
  std::span<const float> fill;
  if (img.channels == 3) fill = kChannelMean;
  WarpedImage out = warp_image(img, rec.geometric, Interp::kBilinear, fill, frame);
  for (auto& v : out.image.data) v = std::clamp(v, 0.0f, 1.0f);
  for (const auto& op : rec.photometric) out.image = apply_photometric(out.image, op);
  if (rec.cutout) apply_cutout(out.image, *rec.cutout);
  return out;
}

}  // namespace mtssl
