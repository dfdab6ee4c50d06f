#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "mtssl/anchors.hpp"
#include "mtssl/augment.hpp"
#include "mtssl/autograd.hpp"
#include "mtssl/error.hpp"
#include "mtssl/geometry.hpp"
#include "mtssl/losses.hpp"
#include "mtssl/rng.hpp"

// A small multi-task network: four stride-2 conv blocks shared by a
// segmentation head (two 1x1 projections fused at 1/4 resolution, upsampled
// to full size) and a single-anchor-per-cell detection head at 1/8
// resolution. Plus the optimizer, the EMA teacher and checkpoint I/O.
namespace mtssl {

struct NetSpec {
  int input_side = 64;
  int seg_classes = 4;
  int det_classes = 3;
  std::array<int, 4> widths{16, 32, 64, 64};
  double anchor_scale = 2.0;

  int det_grid() const { return input_side / 8; }
  int num_anchors() const { return det_grid() * det_grid(); }
  double anchor_side() const { return 8.0 * anchor_scale; }
  BoxSet anchors() const { return make_anchors(input_side, det_grid(), anchor_side()); }
  HeadDims head_dims() const { return {seg_classes, det_classes, input_side, input_side}; }
};

// Initial detection-classifier bias so that every score starts near 0.01.
inline double det_prior_bias() { return -std::log((1.0 - 0.01) / 0.01); }

template <typename T>
ParamStore<T> init_params(const NetSpec& spec, std::uint64_t seed) {
  if (spec.input_side % 16 != 0) throw ConfigError("input side must be a multiple of 16");
  Rng rng(seed, Stream::kInit);
  ParamStore<T> ps;
  auto uniform_fan_in = [&](const std::string& name, int out, int in, int k) {
    Tensor4<T> w(out, in, k, k);
    const double bound = std::sqrt(6.0 / (in * k * k));
    for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
    ps.add(name + ".w", std::move(w));
    ps.add(name + ".b", Tensor4<T>(out, 1, 1, 1));
  };
  auto small_normal = [&](const std::string& name, int out, int in, double bias) {
    Tensor4<T> w(out, in, 1, 1);
    for (auto& v : w.data) v = static_cast<T>(0.01 * rng.normal());
    ps.add(name + ".w", std::move(w));
    ps.add(name + ".b", Tensor4<T>(out, 1, 1, 1, static_cast<T>(bias)));
  };
  const auto& wd = spec.widths;
  uniform_fan_in("block1", wd[0], 3, 3);
  uniform_fan_in("block2", wd[1], wd[0], 3);
  uniform_fan_in("block3", wd[2], wd[1], 3);
  uniform_fan_in("block4", wd[3], wd[2], 3);
  uniform_fan_in("lateral4", wd[2], wd[3], 1);
  uniform_fan_in("seg.fine", spec.seg_classes, wd[1], 1);
  uniform_fan_in("seg.coarse", spec.seg_classes, wd[2], 1);
  small_normal("det.cls", spec.det_classes, wd[2], det_prior_bias());
  small_normal("det.box", 4, wd[2], 0.0);
  return ps;
}

template <typename T>
struct NetOutputs {
  Var seg;      // N x K x S x S
  Var det_cls;  // N x Kd x G x G
  Var det_box;  // N x 4 x G x G
};

// Builds the forward graph for a batch of normalized images (N x 3 x S x S).
template <typename T>
NetOutputs<T> forward(Graph<T>& g, const NetSpec& spec, Tensor4<T> images) {
  if (images.c != 3 || images.h != spec.input_side || images.w != spec.input_side) {
    throw ShapeMismatch("input " + images.shape_string() + " does not match net side " +
                        std::to_string(spec.input_side));
  }
  auto conv = [&](Var x, const std::string& name, int stride, int pad) {
    return g.conv2d(x, g.param(name + ".w"), g.param(name + ".b"), stride, pad);
  };
  const Var x = g.input(std::move(images));
  const Var c1 = g.relu(conv(x, "block1", 2, 1));   // S/2
  const Var c2 = g.relu(conv(c1, "block2", 2, 1));  // S/4
  const Var c3 = g.relu(conv(c2, "block3", 2, 1));  // S/8
  const Var c4 = g.relu(conv(c3, "block4", 2, 1));  // S/16
  const Var p3 = g.add(c3, g.upsample(conv(c4, "lateral4", 1, 0), 2));
  const Var seg_fine = conv(c2, "seg.fine", 1, 0);
  const Var seg_coarse = g.upsample(conv(p3, "seg.coarse", 1, 0), 2);
  const Var seg = g.upsample(g.add(seg_fine, seg_coarse), 4);
  return {seg, conv(p3, "det.cls", 1, 0), conv(p3, "det.box", 1, 0)};
}

// Converts [0,1] HWC images to a normalized NCHW batch.
template <typename T>
Tensor4<T> to_batch(std::span<const Image> images) {
  if (images.empty()) throw ShapeMismatch("empty batch");
  const int h = images[0].height, w = images[0].width;
  Tensor4<T> out(static_cast<int>(images.size()), 3, h, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    if (im.height != h || im.width != w || im.channels != 3) throw ShapeMismatch("ragged batch");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          out.at(static_cast<int>(i), c, y, x) = static_cast<T>(
              (im.at(y, x, c) - kChannelMean[static_cast<std::size_t>(c)]) /
              kChannelStd[static_cast<std::size_t>(c)]);
  }
  return out;
}

template <typename T>
HeadView<T> head_view(const Graph<T>& g, const NetOutputs<T>& out, int i) {
  return {g.value(out.seg).sample(i), g.value(out.det_cls).sample(i),
          g.value(out.det_box).sample(i)};
}

// Greedy non-maximum suppression within each class; returns boxes sorted by
// descending score.
inline BoxSet nms(BoxSet boxes, double iou_threshold) {
  std::stable_sort(boxes.begin(), boxes.end(),
                   [](const Box& a, const Box& b) { return a.score > b.score; });
  BoxSet kept;
  for (const auto& b : boxes) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.class_id == b.class_id && iou(k, b) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(b);
  }
  return kept;
}

struct DecodeParams {
  double nms_iou = 0.5;
  std::size_t max_out = 100;
  double min_score = 0.0;
};

// Turns per-anchor head outputs (planar K x A and 4 x A) into scored boxes:
// best class per anchor, decode about the anchor, clip to the frame, per-class
// NMS, top `max_out`.
template <typename T>
BoxSet decode_detections(std::span<const T> cls, std::span<const T> deltas, const BoxSet& anchors,
                         FrameSize frame, const DecodeParams& dp = {}) {
  const std::size_t na = anchors.size();
  if (na == 0 || cls.size() % na != 0 || deltas.size() != 4 * na) {
    throw ShapeMismatch("head outputs do not match anchors");
  }
  const std::size_t k = cls.size() / na;
  BoxSet cands;
  for (std::size_t a = 0; a < na; ++a) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (cls[c * na + a] > cls[best * na + a]) best = c;
    }
    const double score = detail::sigmoid(static_cast<double>(cls[best * na + a]));
    if (score < dp.min_score) continue;
    const std::array<double, 4> d{static_cast<double>(deltas[a]), static_cast<double>(deltas[na + a]),
                                  static_cast<double>(deltas[2 * na + a]),
                                  static_cast<double>(deltas[3 * na + a])};
    const auto bx = decode_box(anchors[a], d);
    Box b{std::clamp(bx[0], 0.0, static_cast<double>(frame.width)),
          std::clamp(bx[1], 0.0, static_cast<double>(frame.height)),
          std::clamp(bx[2], 0.0, static_cast<double>(frame.width)),
          std::clamp(bx[3], 0.0, static_cast<double>(frame.height)), static_cast<int>(best), score};
    if (b.x1 < b.x2 && b.y1 < b.y2) cands.push_back(b);
  }
  BoxSet kept = nms(std::move(cands), dp.nms_iou);
  if (kept.size() > dp.max_out) kept.resize(dp.max_out);
  return kept;
}

struct SgdParams {
  double lr0 = 0.001;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 5e-4;
  double poly_gamma = 0.9;
};

inline double poly_lr(const SgdParams& p, long long step, long long total_steps) {
  if (total_steps <= 0) return p.lr0;
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
  return p.lr0 * std::pow(std::max(0.0, frac), p.poly_gamma);
}

// One SGD step using the gradients stored in `params`. Weight decay enters as
// an extra wd * theta gradient term.
template <typename T>
void sgd_step(ParamStore<T>& params, long long step, long long total_steps, const SgdParams& sp = {}) {
  if (total_steps > 0 && step >= total_steps) throw OutOfRangeInput("step beyond schedule");
  const T lr = static_cast<T>(poly_lr(sp, step, total_steps));
  const T mu = static_cast<T>(sp.momentum), wd = static_cast<T>(sp.weight_decay);
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T g = p.grad.data[i] + wd * p.value.data[i];
      T& v = p.momentum.data[i];
      v = mu * v + g;
      const T upd = sp.nesterov ? g + mu * v : v;
      p.value.data[i] -= lr * upd;
    }
  }
  ++params.gradient_steps;
}

inline constexpr double kEmaDecay = 0.99;

template <typename T>
struct EmaTeacher {
  ParamStore<T> shadow;
  double decay = kEmaDecay;

  static EmaTeacher from(const ParamStore<T>& student, double decay = kEmaDecay) {
    EmaTeacher t{student.template cast<T>(), decay};
    return t;
  }
};

template <typename T>
void ema_update(EmaTeacher<T>& teacher, const ParamStore<T>& student) {
  if (teacher.shadow.size() != student.size()) throw ShapeMismatch("parameter count differs");
  const T d = static_cast<T>(teacher.decay);
  for (std::size_t k = 0; k < student.size(); ++k) {
    auto& t = teacher.shadow[static_cast<int>(k)].value;
    const auto& s = student[static_cast<int>(k)].value;
    if (!t.same_shape(s)) throw ShapeMismatch("parameter " + student[static_cast<int>(k)].name);
    for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = d * t.data[i] + (T(1) - d) * s.data[i];
  }
  ++teacher.shadow.ema_steps;
}

// Checkpoint container:
//   "MTSSLCKP" | u32 version | u64 step | u64 seed | blob config |
//   u32 tensor count | tensors | u32 history count | (u64 step, f64 miou, f64 map)*
// Each tensor: blob name | u32 dtype (1 = f32, 2 = f64) | u32 ndim | u32 dims |
// raw little-endian data. Names are prefixed with "student/", "momentum/" or
// "teacher/".
inline constexpr char kCheckpointMagic[8] = {'M', 'T', 'S', 'S', 'L', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct HistoryEntry {
  long long step = 0;
  double miou = 0.0;
  double map = 0.0;
  friend bool operator==(const HistoryEntry&, const HistoryEntry&) = default;
};

template <typename T>
struct Checkpoint {
  long long step = 0;
  std::uint64_t seed = 0;
  std::string config;
  ParamStore<T> student;
  ParamStore<T> teacher;
  std::vector<HistoryEntry> history;
};

namespace detail {

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
inline void put_blob(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
template <typename V>
V get(std::istream& is) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) throw IoError("truncated checkpoint");
  return v;
}
inline std::string get_blob(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw IoError("truncated checkpoint");
  return s;
}

template <typename T>
constexpr std::uint32_t dtype_code() {
  return sizeof(T) == 4 ? 1u : 2u;
}

template <typename T>
void put_tensor(std::ostream& os, const std::string& name, const Tensor4<T>& t) {
  put_blob(os, name);
  put<std::uint32_t>(os, dtype_code<T>());
  put<std::uint32_t>(os, 4);
  for (int d : {t.n, t.c, t.h, t.w}) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.size() * sizeof(T)));
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write(kCheckpointMagic, 8);
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(ck.step));
  detail::put<std::uint64_t>(os, ck.seed);
  detail::put_blob(os, ck.config);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(3 * ck.student.size()));
  for (const auto& p : ck.student) detail::put_tensor(os, "student/" + p.name, p.value);
  for (const auto& p : ck.student) detail::put_tensor(os, "momentum/" + p.name, p.momentum);
  for (const auto& p : ck.teacher) detail::put_tensor(os, "teacher/" + p.name, p.value);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.history.size()));
  for (const auto& h : ck.history) {
    detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(h.step));
    detail::put<double>(os, h.miou);
    detail::put<double>(os, h.map);
  }
  if (!os) throw IoError("write failed for " + path);
}

// Loads a checkpoint into parameter stores laid out by `spec`.
template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path, const NetSpec& spec) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw IoError(path + " is not a checkpoint");
  }
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version");
  Checkpoint<T> ck;
  ck.step = static_cast<long long>(detail::get<std::uint64_t>(is));
  ck.seed = detail::get<std::uint64_t>(is);
  ck.config = detail::get_blob(is);
  ck.student = init_params<T>(spec, 0);
  ck.teacher = init_params<T>(spec, 0);
  const auto count = detail::get<std::uint32_t>(is);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = detail::get_blob(is);
    const auto dtype = detail::get<std::uint32_t>(is);
    const auto ndim = detail::get<std::uint32_t>(is);
    if (ndim != 4) throw IoError("unexpected tensor rank in " + name);
    int dims[4];
    for (auto& d : dims) d = static_cast<int>(detail::get<std::uint32_t>(is));
    const auto slash = name.find('/');
    const std::string group = name.substr(0, slash), pname = name.substr(slash + 1);
    auto& store = group == "teacher" ? ck.teacher : ck.student;
    auto& param = store[pname];
    Tensor4<T>& dst = group == "momentum" ? param.momentum : param.value;
    if (dst.n != dims[0] || dst.c != dims[1] || dst.h != dims[2] || dst.w != dims[3]) {
      throw ShapeMismatch("checkpoint tensor " + name + " has the wrong shape");
    }
    for (auto& v : dst.data) {
      if (dtype == 1) {
        v = static_cast<T>(detail::get<float>(is));
      } else if (dtype == 2) {
        v = static_cast<T>(detail::get<double>(is));
      } else {
        throw IoError("unknown dtype in " + name);
      }
    }
  }
  const auto nh = detail::get<std::uint32_t>(is);
  for (std::uint32_t k = 0; k < nh; ++k) {
    HistoryEntry h;
    h.step = static_cast<long long>(detail::get<std::uint64_t>(is));
    h.miou = detail::get<double>(is);
    h.map = detail::get<double>(is);
    ck.history.push_back(h);
  }
  return ck;
}

}  // namespace mtssl
