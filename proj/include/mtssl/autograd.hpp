#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mtssl/error.hpp"

// Minimal reverse-mode differentiation over NCHW tensors: a tape of nodes,
// each produced by one op, walked backwards once per forward pass.
namespace mtssl {

template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, T value = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, value) {}

  std::size_t size() const { return data.size(); }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  T& at(int i, int ch, int y, int x) {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  T at(int i, int ch, int y, int x) const {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  std::span<const T> sample(int i) const {
    return {data.data() + static_cast<std::size_t>(i) * sample_size(), sample_size()};
  }
  std::span<T> sample(int i) {
    return {data.data() + static_cast<std::size_t>(i) * sample_size(), sample_size()};
  }
  std::string shape_string() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }
};

// Named parameter tensors with gradient and momentum slots. The counters
// record how the values were last changed, so callers can assert that a
// teacher copy is only ever touched by averaging.
template <typename T>
class ParamStore {
 public:
  struct Param {
    std::string name;
    Tensor4<T> value;
    Tensor4<T> grad;
    Tensor4<T> momentum;
  };

  int add(const std::string& name, Tensor4<T> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
    Param p{name, value, Tensor4<T>(value.n, value.c, value.h, value.w),
            Tensor4<T>(value.n, value.c, value.h, value.w)};
    params_.push_back(std::move(p));
    index_[name] = static_cast<int>(params_.size() - 1);
    return static_cast<int>(params_.size() - 1);
  }

  int index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }

  Param& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
  const Param& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }
  Param& operator[](const std::string& name) { return (*this)[index(name)]; }
  const Param& operator[](const std::string& name) const { return (*this)[index(name)]; }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), T(0));
  }

  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) {
      Tensor4<U> v(p.value.n, p.value.c, p.value.h, p.value.w);
      for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = static_cast<U>(p.value.data[i]);
      out.add(p.name, std::move(v));
    }
    return out;
  }

  std::uint64_t gradient_steps = 0;  // optimizer updates applied
  std::uint64_t ema_steps = 0;       // averaging updates applied

 private:
  std::vector<Param> params_;
  std::map<std::string, int> index_;
};

struct Var {
  int id = -1;
};

template <typename T>
class Graph {
 public:
  explicit Graph(ParamStore<T>& params) : params_(&params) {}

  Var input(Tensor4<T> value) {
    Node nd;
    nd.op = Op::kInput;
    nd.value = std::move(value);
    return push(std::move(nd));
  }

  Var param(const std::string& name) {
    Node nd;
    nd.op = Op::kParam;
    nd.param = params_->index(name);
    return push(std::move(nd));
  }

  const Tensor4<T>& value(Var v) const {
    const Node& nd = nodes_[static_cast<std::size_t>(v.id)];
    return nd.op == Op::kParam ? (*params_)[nd.param].value : nd.value;
  }

  // 2-D convolution, square kernel from the weight shape (O x C x k x k).
  Var conv2d(Var x, Var wt, Var bias, int stride, int pad) {
    const auto& xv = value(x);
    const auto& wv = value(wt);
    if (wv.c != xv.c || wv.h != wv.w) {
      throw ShapeMismatch("conv weight " + wv.shape_string() + " vs input " + xv.shape_string());
    }
    const int k = wv.h;
    const int ho = (xv.h + 2 * pad - k) / stride + 1;
    const int wo = (xv.w + 2 * pad - k) / stride + 1;
    Node nd;
    nd.op = Op::kConv;
    nd.inputs = {x.id, wt.id, bias.id};
    nd.stride = stride;
    nd.pad = pad;
    nd.value = Tensor4<T>(xv.n, wv.n, ho, wo);
    const auto& bv = value(bias);
    std::vector<T> col;
    for (int i = 0; i < xv.n; ++i) {
      im2col(xv, i, k, stride, pad, ho, wo, col);
      MatMap out(nd.value.data.data() + static_cast<std::size_t>(i) * nd.value.sample_size(), wv.n,
                 ho * wo);
      CMatMap wm(wv.data.data(), wv.n, xv.c * k * k);
      CMatMap cm(col.data(), xv.c * k * k, ho * wo);
      out.noalias() = wm * cm;
      for (int o = 0; o < wv.n; ++o) out.row(o).array() += bv.data[static_cast<std::size_t>(o)];
    }
    return push(std::move(nd));
  }

  Var relu(Var x) {
    Node nd;
    nd.op = Op::kRelu;
    nd.inputs = {x.id};
    nd.value = value(x);
    for (auto& v : nd.value.data) v = v > T(0) ? v : T(0);
    return push(std::move(nd));
  }

  Var add(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (!av.same_shape(bv)) throw ShapeMismatch("add " + av.shape_string() + " vs " + bv.shape_string());
    Node nd;
    nd.op = Op::kAdd;
    nd.inputs = {a.id, b.id};
    nd.value = av;
    for (std::size_t i = 0; i < nd.value.size(); ++i) nd.value.data[i] += bv.data[i];
    return push(std::move(nd));
  }

  // Bilinear upsampling by an integer factor. Output pixel u samples the input
  // at u / factor, which matches the sampling grid of stride-`factor`
  // convolutions (input j sits over output factor * j).
  Var upsample(Var x, int factor) {
    const auto& xv = value(x);
    Node nd;
    nd.op = Op::kUpsample;
    nd.inputs = {x.id};
    nd.factor = factor;
    nd.value = Tensor4<T>(xv.n, xv.c, xv.h * factor, xv.w * factor);
    const auto ty = taps(xv.h, factor), tx = taps(xv.w, factor);
    for (int i = 0; i < xv.n; ++i)
      for (int ch = 0; ch < xv.c; ++ch)
        for (int y = 0; y < nd.value.h; ++y) {
          const auto& a = ty[static_cast<std::size_t>(y)];
          for (int x2 = 0; x2 < nd.value.w; ++x2) {
            const auto& b = tx[static_cast<std::size_t>(x2)];
            nd.value.at(i, ch, y, x2) =
                (xv.at(i, ch, a.i0, b.i0) * (T(1) - b.frac) + xv.at(i, ch, a.i0, b.i1) * b.frac) *
                    (T(1) - a.frac) +
                (xv.at(i, ch, a.i1, b.i0) * (T(1) - b.frac) + xv.at(i, ch, a.i1, b.i1) * b.frac) *
                    a.frac;
          }
        }
    return push(std::move(nd));
  }

  std::size_t num_nodes() const { return nodes_.size(); }

  // Seeds the listed outputs with their loss gradients and propagates back to
  // the parameters. Parameter gradients are reset first, so parameters the
  // loss does not reach end up with zero gradient. May run once per graph.
  void backward(std::span<const std::pair<Var, const Tensor4<T>*>> seeds) {
    if (backward_done_) throw GraphReuse("backward already ran on this graph");
    backward_done_ = true;
    params_->zero_grad();
    std::vector<Tensor4<T>> grads(nodes_.size());
    for (const auto& [v, g] : seeds) {
      const auto& val = value(v);
      if (!g->same_shape(val)) throw ShapeMismatch("seed gradient shape " + g->shape_string());
      auto& dst = grad_slot(grads, v.id);
      for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += g->data[i];
    }
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      auto& g = grads[static_cast<std::size_t>(id)];
      if (g.data.empty()) continue;
      const Node& nd = nodes_[static_cast<std::size_t>(id)];
      switch (nd.op) {
        case Op::kInput: break;
        case Op::kParam: {
          auto& pg = (*params_)[nd.param].grad;
          for (std::size_t i = 0; i < g.size(); ++i) pg.data[i] += g.data[i];
          break;
        }
        case Op::kRelu: {
          auto& dx = grad_slot(grads, nd.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (nd.value.data[i] > T(0)) dx.data[i] += g.data[i];
          }
          break;
        }
        case Op::kAdd: {
          for (int in : nd.inputs) {
            auto& dx = grad_slot(grads, in);
            for (std::size_t i = 0; i < g.size(); ++i) dx.data[i] += g.data[i];
          }
          break;
        }
        case Op::kUpsample: backward_upsample(nd, g, grads); break;
        case Op::kConv: backward_conv(nd, g, grads); break;
      }
      g = Tensor4<T>();  // release
    }
  }

 private:
  enum class Op { kInput, kParam, kConv, kRelu, kAdd, kUpsample };

  struct Node {
    Op op = Op::kInput;
    std::vector<int> inputs;
    Tensor4<T> value;
    int param = -1;
    int stride = 1, pad = 0, factor = 1;
  };

  struct Tap {
    int i0 = 0, i1 = 0;
    T frac = T(0);
  };

  using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using CMatMap =
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Var push(Node nd) {
    if (backward_done_) throw GraphReuse("graph already differentiated; build a fresh one");
    nodes_.push_back(std::move(nd));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  Tensor4<T>& grad_slot(std::vector<Tensor4<T>>& grads, int id) {
    auto& g = grads[static_cast<std::size_t>(id)];
    if (g.data.empty()) {
      const auto& v = value(Var{id});
      g = Tensor4<T>(v.n, v.c, v.h, v.w);
    }
    return g;
  }

  static std::vector<Tap> taps(int in, int factor) {
    std::vector<Tap> out(static_cast<std::size_t>(in * factor));
    for (int u = 0; u < in * factor; ++u) {
      const double s = static_cast<double>(u) / factor;
      const int i0 = std::min(static_cast<int>(s), in - 1);
      const int i1 = std::min(i0 + 1, in - 1);
      out[static_cast<std::size_t>(u)] = {i0, i1, static_cast<T>(i1 == i0 ? 0.0 : s - i0)};
    }
    return out;
  }

  static void im2col(const Tensor4<T>& x, int i, int k, int stride, int pad, int ho, int wo,
                     std::vector<T>& col) {
    col.assign(static_cast<std::size_t>(x.c) * k * k * ho * wo, T(0));
    std::size_t r = 0;
    for (int ch = 0; ch < x.c; ++ch)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++r) {
          T* dst = col.data() + r * static_cast<std::size_t>(ho * wo);
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < x.w) dst[oy * wo + ox] = x.at(i, ch, iy, ix);
            }
          }
        }
  }

  static void col2im(const std::vector<T>& col, Tensor4<T>& dx, int i, int k, int stride, int pad,
                     int ho, int wo) {
    std::size_t r = 0;
    for (int ch = 0; ch < dx.c; ++ch)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++r) {
          const T* src = col.data() + r * static_cast<std::size_t>(ho * wo);
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= dx.h) continue;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < dx.w) dx.at(i, ch, iy, ix) += src[oy * wo + ox];
            }
          }
        }
  }

  void backward_conv(const Node& nd, const Tensor4<T>& g, std::vector<Tensor4<T>>& grads) {
    const auto& xv = value(Var{nd.inputs[0]});
    const auto& wv = value(Var{nd.inputs[1]});
    const int k = wv.h, ho = nd.value.h, wo = nd.value.w;
    const int rows = xv.c * k * k;
    auto& dw = grad_slot(grads, nd.inputs[1]);
    auto& db = grad_slot(grads, nd.inputs[2]);
    const bool need_dx = nodes_[static_cast<std::size_t>(nd.inputs[0])].op != Op::kInput;
    Tensor4<T>* dx = need_dx ? &grad_slot(grads, nd.inputs[0]) : nullptr;
    std::vector<T> col, dcol(static_cast<std::size_t>(rows) * ho * wo);
    MatMap dwm(dw.data.data(), wv.n, rows);
    CMatMap wm(wv.data.data(), wv.n, rows);
    for (int i = 0; i < xv.n; ++i) {
      CMatMap gm(g.data.data() + static_cast<std::size_t>(i) * g.sample_size(), wv.n, ho * wo);
      im2col(xv, i, k, nd.stride, nd.pad, ho, wo, col);
      CMatMap cm(col.data(), rows, ho * wo);
      dwm.noalias() += gm * cm.transpose();
      // Scalar loop: fixed summation order.
      for (int o = 0; o < wv.n; ++o) {
        const T* row = g.data.data() + static_cast<std::size_t>(i) * g.sample_size() + static_cast<std::size_t>(o) * ho * wo;
        T s = T(0);
        for (int j = 0; j < ho * wo; ++j) s += row[j];
        db.data[static_cast<std::size_t>(o)] += s;
      }
      if (dx) {
        MatMap dcm(dcol.data(), rows, ho * wo);
        dcm.noalias() = wm.transpose() * gm;
        col2im(dcol, *dx, i, k, nd.stride, nd.pad, ho, wo);
      }
    }
  }

  void backward_upsample(const Node& nd, const Tensor4<T>& g, std::vector<Tensor4<T>>& grads) {
    const auto& xv = value(Var{nd.inputs[0]});
    auto& dx = grad_slot(grads, nd.inputs[0]);
    const auto ty = taps(xv.h, nd.factor), tx = taps(xv.w, nd.factor);
    for (int i = 0; i < xv.n; ++i)
      for (int ch = 0; ch < xv.c; ++ch)
        for (int y = 0; y < g.h; ++y) {
          const auto& a = ty[static_cast<std::size_t>(y)];
          for (int x2 = 0; x2 < g.w; ++x2) {
            const auto& b = tx[static_cast<std::size_t>(x2)];
            const T v = g.at(i, ch, y, x2);
            dx.at(i, ch, a.i0, b.i0) += v * (T(1) - a.frac) * (T(1) - b.frac);
            dx.at(i, ch, a.i0, b.i1) += v * (T(1) - a.frac) * b.frac;
            dx.at(i, ch, a.i1, b.i0) += v * a.frac * (T(1) - b.frac);
            dx.at(i, ch, a.i1, b.i1) += v * a.frac * b.frac;
          }
        }
  }

  ParamStore<T>* params_;
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace mtssl
