// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor ops recorded on a Graph. Every op is generic over
// the scalar type so the same code runs on float, double and Dual<T>.

#pragma once

#include <cmath>
#include <memory>
#include <numeric>
#include <span>
#include <vector>

#include "vidgan/autograd.hpp"
#include "vidgan/dual.hpp"
#include "vidgan/gemm.hpp"
#include "vidgan/tensor.hpp"

namespace vidgan::ops {

struct Pad3 {
  Index t = 0, h = 0, w = 0;
};

namespace detail {

inline std::size_t u(Index i) { return static_cast<std::size_t>(i); }

struct ConvGeometry {
  Index n, ci, t, h, w;     // input
  Index co, kt, kh, kw;     // kernel
  Pad3 pad;
  Index to, ho, wo;         // output

  Index in_volume() const { return t * h * w; }
  Index out_volume() const { return to * ho * wo; }
  Index patch() const { return ci * kt * kh * kw; }
  bool pointwise() const {
    return kt == 1 && kh == 1 && kw == 1 && pad.t == 0 && pad.h == 0 && pad.w == 0;
  }
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, Pad3 pad) {
  require_rank(x, 5, "conv3d input");
  require_rank(w, 5, "conv3d weight");
  if (x[1] != w[1]) {
    throw ShapeError("conv3d: input has " + std::to_string(x[1]) + " channels, weight expects " +
                     std::to_string(w[1]));
  }
  ConvGeometry g{x[0], x[1], x[2], x[3], x[4], w[0], w[2], w[3], w[4], pad, 0, 0, 0};
  g.to = g.t + 2 * pad.t - g.kt + 1;
  g.ho = g.h + 2 * pad.h - g.kh + 1;
  g.wo = g.w + 2 * pad.w - g.kw + 1;
  if (g.to < 1 || g.ho < 1 || g.wo < 1) {
    throw ShapeError("conv3d: kernel larger than padded input " + to_string(x));
  }
  return g;
}

// cols[(c, dt, dh, dw), (ot, oh, ow)] = x[c, ot+dt-pt, oh+dh-ph, ow+dw-pw] (zero outside)
template <class S>
void im2col(const S* x, const ConvGeometry& g, S* cols) {
  const Index plane = g.out_volume();
  Index row = 0;
  for (Index c = 0; c < g.ci; ++c) {
    for (Index dt = 0; dt < g.kt; ++dt) {
      for (Index dh = 0; dh < g.kh; ++dh) {
        for (Index dw = 0; dw < g.kw; ++dw, ++row) {
          S* out = cols + row * plane;
          const Index ow_lo = std::max<Index>(0, g.pad.w - dw);
          const Index ow_hi = std::min<Index>(g.wo, g.w + g.pad.w - dw);
          for (Index ot = 0; ot < g.to; ++ot) {
            const Index it = ot + dt - g.pad.t;
            for (Index oh = 0; oh < g.ho; ++oh) {
              S* o = out + (ot * g.ho + oh) * g.wo;
              const Index ih = oh + dh - g.pad.h;
              if (it < 0 || it >= g.t || ih < 0 || ih >= g.h || ow_lo >= ow_hi) {
                std::fill(o, o + g.wo, S(0));
                continue;
              }
              const S* xr = x + ((c * g.t + it) * g.h + ih) * g.w + (dw - g.pad.w);
              std::fill(o, o + ow_lo, S(0));
              std::copy(xr + ow_lo, xr + ow_hi, o + ow_lo);
              std::fill(o + ow_hi, o + g.wo, S(0));
            }
          }
        }
      }
    }
  }
}

template <class S>
void col2im(const S* cols, const ConvGeometry& g, S* dx) {
  const Index plane = g.out_volume();
  Index row = 0;
  for (Index c = 0; c < g.ci; ++c) {
    for (Index dt = 0; dt < g.kt; ++dt) {
      for (Index dh = 0; dh < g.kh; ++dh) {
        for (Index dw = 0; dw < g.kw; ++dw, ++row) {
          const S* in = cols + row * plane;
          const Index ow_lo = std::max<Index>(0, g.pad.w - dw);
          const Index ow_hi = std::min<Index>(g.wo, g.w + g.pad.w - dw);
          for (Index ot = 0; ot < g.to; ++ot) {
            const Index it = ot + dt - g.pad.t;
            if (it < 0 || it >= g.t) continue;
            for (Index oh = 0; oh < g.ho; ++oh) {
              const Index ih = oh + dh - g.pad.h;
              if (ih < 0 || ih >= g.h) continue;
              const S* o = in + (ot * g.ho + oh) * g.wo;
              S* xr = dx + ((c * g.t + it) * g.h + ih) * g.w + (dw - g.pad.w);
              for (Index ow = ow_lo; ow < ow_hi; ++ow) xr[ow] += o[ow];
            }
          }
        }
      }
    }
  }
}

template <class S>
S stable_sigmoid(const S& x) {
  using std::exp;
  if (value_of(x) >= 0) return S(1) / (S(1) + exp(-x));
  const S e = exp(x);
  return e / (S(1) + e);
}

template <class S>
S stable_softplus(const S& x) {
  using std::exp;
  using std::log1p;
  // max(x, 0) + log1p(exp(-|x|))
  if (value_of(x) >= 0) return x + log1p(exp(-x));
  return log1p(exp(x));
}

inline Index inner_size(const Shape& s, int axis) {
  Index n = 1;
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) n *= s[i];
  return n;
}
inline Index outer_size(const Shape& s, int axis) {
  Index n = 1;
  for (int i = 0; i < axis; ++i) n *= s[static_cast<std::size_t>(i)];
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

// 3D convolution, stride 1. x: (N, Ci, T, H, W), w: (Co, Ci, kt, kh, kw),
// b: (Co) or an invalid Var for no bias.
template <class S>
Var conv3d(Graph<S>& g, Var x, Var w, Var b, Pad3 pad) {
  const detail::ConvGeometry geo = detail::conv_geometry(g.shape(x), g.shape(w), pad);
  if (b.valid() && g.shape(b) != Shape{geo.co}) throw ShapeError("conv3d: bias shape mismatch");
  const Tensor<S>& xv = g.value(x);
  const Tensor<S>& wv = g.value(w);
  Tensor<S> y({geo.n, geo.co, geo.to, geo.ho, geo.wo});
  const Index k = geo.patch(), p = geo.out_volume(), in_vol = geo.ci * geo.in_volume();
  std::vector<S> cols(geo.pointwise() ? 0 : detail::u(k * p));
  for (Index n = 0; n < geo.n; ++n) {
    const S* xn = xv.data() + n * in_vol;
    const S* colp = xn;
    if (!geo.pointwise()) {
      detail::im2col(xn, geo, cols.data());
      colp = cols.data();
    }
    S* yn = y.data() + n * geo.co * p;
    gemm::multiply(gemm::Op::N, gemm::Op::N, geo.co, p, k, wv.data(), colp, yn, false);
    if (b.valid()) {
      const Tensor<S>& bv = g.value(b);
      for (Index c = 0; c < geo.co; ++c) {
        S* row = yn + c * p;
        for (Index i = 0; i < p; ++i) row[i] += bv[c];
      }
    }
  }
  return g.record(std::move(y), {x, w, b}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    const Tensor<S>& xv = gr.value(x);
    const Tensor<S>& wv = gr.value(w);
    const bool need_x = gr.requires_grad(x), need_w = gr.requires_grad(w);
    const bool need_b = b.valid() && gr.requires_grad(b);
    S* dw = need_w ? gr.grad_buffer(w).data() : nullptr;
    S* db = need_b ? gr.grad_buffer(b).data() : nullptr;
    S* dx = need_x ? gr.grad_buffer(x).data() : nullptr;
    const Index k = geo.patch(), p = geo.out_volume(), in_vol = geo.ci * geo.in_volume();
    std::vector<S> cols(geo.pointwise() ? 0 : detail::u(k * p));
    for (Index n = 0; n < geo.n; ++n) {
      const S* gyn = gy.data() + n * geo.co * p;
      if (need_w) {
        const S* colp = xv.data() + n * in_vol;
        if (!geo.pointwise()) {
          detail::im2col(colp, geo, cols.data());
          colp = cols.data();
        }
        gemm::multiply(gemm::Op::N, gemm::Op::T, geo.co, k, p, gyn, colp, dw, true);
      }
      if (need_b) {
        for (Index c = 0; c < geo.co; ++c) {
          S acc(0);
          for (Index i = 0; i < p; ++i) acc += gyn[c * p + i];
          db[c] += acc;
        }
      }
      if (need_x) {
        S* dxn = dx + n * in_vol;
        if (geo.pointwise()) {
          gemm::multiply(gemm::Op::T, gemm::Op::N, k, p, geo.co, wv.data(), gyn, dxn, true);
        } else {
          gemm::multiply(gemm::Op::T, gemm::Op::N, k, p, geo.co, wv.data(), gyn, cols.data(),
                         false);
          detail::col2im(cols.data(), geo, dxn);
        }
      }
    }
  });
}

// y = x w^T + b. x: (N, I), w: (O, I), b: (O) or invalid.
template <class S>
Var linear(Graph<S>& g, Var x, Var w, Var b) {
  const Shape& xs = g.shape(x);
  const Shape& ws = g.shape(w);
  require_rank(xs, 2, "linear input");
  require_rank(ws, 2, "linear weight");
  if (xs[1] != ws[1]) {
    throw ShapeError("linear: input " + to_string(xs) + " incompatible with weight " + to_string(ws));
  }
  const Index n = xs[0], in = xs[1], out = ws[0];
  Tensor<S> y({n, out});
  gemm::multiply(gemm::Op::N, gemm::Op::T, n, out, in, g.value(x).data(), g.value(w).data(),
                 y.data(), false);
  if (b.valid()) {
    if (g.shape(b) != Shape{out}) throw ShapeError("linear: bias shape mismatch");
    const Tensor<S>& bv = g.value(b);
    for (Index i = 0; i < n; ++i)
      for (Index o = 0; o < out; ++o) y[i * out + o] += bv[o];
  }
  return g.record(std::move(y), {x, w, b}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    if (gr.requires_grad(x)) {
      gemm::multiply(gemm::Op::N, gemm::Op::N, n, in, out, gy.data(), gr.value(w).data(),
                     gr.grad_buffer(x).data(), true);
    }
    if (gr.requires_grad(w)) {
      gemm::multiply(gemm::Op::T, gemm::Op::N, out, in, n, gy.data(), gr.value(x).data(),
                     gr.grad_buffer(w).data(), true);
    }
    if (b.valid() && gr.requires_grad(b)) {
      Tensor<S>& db = gr.grad_buffer(b);
      for (Index i = 0; i < n; ++i)
        for (Index o = 0; o < out; ++o) db[o] += gy[i * out + o];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class S, class F, class DF>
Var unary(Graph<S>& g, Var x, F f, DF df) {
  const Tensor<S>& xv = g.value(x);
  Tensor<S> y(xv.shape());
  for (Index i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  return g.record(std::move(y), {x}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    const Tensor<S>& xv = gr.value(x);
    Tensor<S>& dx = gr.grad_buffer(x);
    for (Index i = 0; i < gy.size(); ++i) dx[i] += gy[i] * df(xv[i]);
  });
}

template <class S>
Var relu(Graph<S>& g, Var x) {
  return unary(
      g, x, [](const S& v) { return value_of(v) > 0 ? v : S(0); },
      [](const S& v) { return value_of(v) > 0 ? S(1) : S(0); });
}

template <class S>
Var tanh(Graph<S>& g, Var x) {
  return unary(
      g, x, [](const S& v) { using std::tanh; return tanh(v); },
      [](const S& v) {
        using std::tanh;
        const S t = tanh(v);
        return S(1) - t * t;
      });
}

template <class S>
Var sigmoid(Graph<S>& g, Var x) {
  return unary(
      g, x, [](const S& v) { return detail::stable_sigmoid(v); },
      [](const S& v) {
        const S s = detail::stable_sigmoid(v);
        return s * (S(1) - s);
      });
}

template <class S>
Var softplus(Graph<S>& g, Var x) {
  return unary(
      g, x, [](const S& v) { return detail::stable_softplus(v); },
      [](const S& v) { return detail::stable_sigmoid(v); });
}

template <class S>
Var scale(Graph<S>& g, Var x, real_t<S> factor) {
  return unary(
      g, x, [factor](const S& v) { return v * S(factor); },
      [factor](const S&) { return S(factor); });
}

template <class S>
Var add(Graph<S>& g, Var a, Var b) {
  require_same_shape(g.shape(a), g.shape(b), "add");
  const Tensor<S>& av = g.value(a);
  const Tensor<S>& bv = g.value(b);
  Tensor<S> y(av.shape());
  for (Index i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return g.record(std::move(y), {a, b}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    gr.accumulate(a, gy);
    gr.accumulate(b, gy);
  });
}

template <class S>
Var mul(Graph<S>& g, Var a, Var b) {
  require_same_shape(g.shape(a), g.shape(b), "mul");
  const Tensor<S>& av = g.value(a);
  const Tensor<S>& bv = g.value(b);
  Tensor<S> y(av.shape());
  for (Index i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return g.record(std::move(y), {a, b}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    const Tensor<S>& av = gr.value(a);
    const Tensor<S>& bv = gr.value(b);
    if (gr.requires_grad(a)) {
      Tensor<S>& da = gr.grad_buffer(a);
      for (Index i = 0; i < gy.size(); ++i) da[i] += gy[i] * bv[i];
    }
    if (gr.requires_grad(b)) {
      Tensor<S>& db = gr.grad_buffer(b);
      for (Index i = 0; i < gy.size(); ++i) db[i] += gy[i] * av[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <class S>
Var sum(Graph<S>& g, Var x) {
  const Tensor<S>& xv = g.value(x);
  S acc(0);
  for (const S& v : xv.values()) acc += v;
  return g.record(Tensor<S>({1}, acc), {x}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    Tensor<S>& dx = gr.grad_buffer(x);
    for (Index i = 0; i < dx.size(); ++i) dx[i] += gy[0];
  });
}

template <class S>
Var mean(Graph<S>& g, Var x) {
  const Index n = g.value(x).size();
  return scale(g, sum(g, x), real_t<S>(1) / static_cast<real_t<S>>(n));
}

// Sums every axis after the channel axis: (N, C, ...) -> (N, C).
template <class S>
Var sum_spatial(Graph<S>& g, Var x) {
  const Shape& xs = g.shape(x);
  if (xs.size() < 2) throw ShapeError("sum_spatial: rank >= 2 required");
  const Index n = xs[0], c = xs[1], inner = detail::inner_size(xs, 1);
  const Tensor<S>& xv = g.value(x);
  Tensor<S> y({n, c});
  for (Index i = 0; i < n * c; ++i) {
    S acc(0);
    const S* p = xv.data() + i * inner;
    for (Index j = 0; j < inner; ++j) acc += p[j];
    y[i] = acc;
  }
  return g.record(std::move(y), {x}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    Tensor<S>& dx = gr.grad_buffer(x);
    for (Index i = 0; i < n * c; ++i) {
      S* p = dx.data() + i * inner;
      for (Index j = 0; j < inner; ++j) p[j] += gy[i];
    }
  });
}

// Row-wise inner product: (N, C) x (N, C) -> (N).
template <class S>
Var row_dot(Graph<S>& g, Var a, Var b) {
  require_same_shape(g.shape(a), g.shape(b), "row_dot");
  require_rank(g.shape(a), 2, "row_dot");
  const Index n = g.shape(a)[0], c = g.shape(a)[1];
  const Tensor<S>& av = g.value(a);
  const Tensor<S>& bv = g.value(b);
  Tensor<S> y({n});
  for (Index i = 0; i < n; ++i) {
    S acc(0);
    for (Index j = 0; j < c; ++j) acc += av[i * c + j] * bv[i * c + j];
    y[i] = acc;
  }
  return g.record(std::move(y), {a, b}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    const Tensor<S>& av = gr.value(a);
    const Tensor<S>& bv = gr.value(b);
    if (gr.requires_grad(a)) {
      Tensor<S>& da = gr.grad_buffer(a);
      for (Index i = 0; i < n * c; ++i) da[i] += gy[i / c] * bv[i];
    }
    if (gr.requires_grad(b)) {
      Tensor<S>& db = gr.grad_buffer(b);
      for (Index i = 0; i < n * c; ++i) db[i] += gy[i / c] * av[i];
    }
  });
}

// Mean softmax cross-entropy of (N, K) logits against integer labels.
template <class S>
Var softmax_cross_entropy(Graph<S>& g, Var logits, const std::vector<int>& labels) {
  using std::exp;
  using std::log;
  const Shape& ls = g.shape(logits);
  require_rank(ls, 2, "softmax_cross_entropy");
  const Index n = ls[0], k = ls[1];
  if (static_cast<Index>(labels.size()) != n) throw ShapeError("softmax_cross_entropy: label count");
  const Tensor<S>& lv = g.value(logits);
  auto probs = std::make_shared<std::vector<S>>(detail::u(n * k));
  S loss(0);
  for (Index i = 0; i < n; ++i) {
    const int y = labels[detail::u(i)];
    if (y < 0 || y >= k) throw std::out_of_range("softmax_cross_entropy: label out of range");
    S mx = lv[i * k];
    for (Index j = 1; j < k; ++j)
      if (value_of(lv[i * k + j]) > value_of(mx)) mx = lv[i * k + j];
    S z(0);
    for (Index j = 0; j < k; ++j) z += exp(lv[i * k + j] - mx);
    for (Index j = 0; j < k; ++j) (*probs)[detail::u(i * k + j)] = exp(lv[i * k + j] - mx) / z;
    loss += log(z) + mx - lv[i * k + y];
  }
  loss = loss / S(static_cast<real_t<S>>(n));
  return g.record(Tensor<S>({1}, loss), {logits},
                  [=](Graph<S>& gr, const Tensor<S>& gy) {
                    Tensor<S>& dl = gr.grad_buffer(logits);
                    const S inv = gy[0] / S(static_cast<real_t<S>>(n));
                    for (Index i = 0; i < n; ++i) {
                      for (Index j = 0; j < k; ++j) {
                        S grad = (*probs)[detail::u(i * k + j)];
                        if (j == labels[detail::u(i)]) grad -= S(1);
                        dl[i * k + j] += grad * inv;
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class S>
Var reshape(Graph<S>& g, Var x, Shape shape) {
  Tensor<S> y = g.value(x).reshaped(shape);
  return g.record(std::move(y), {x}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    Tensor<S>& dx = gr.grad_buffer(x);
    for (Index i = 0; i < gy.size(); ++i) dx[i] += gy[i];
  });
}

// Concatenates along `axis`; all other dimensions must agree.
template <class S>
Var concat(Graph<S>& g, const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  Shape out = g.shape(xs.front());
  if (axis < 0 || axis >= static_cast<int>(out.size())) throw ShapeError("concat: bad axis");
  out[detail::u(axis)] = 0;
  std::vector<Index> widths;
  for (Var v : xs) {
    Shape s = g.shape(v);
    if (s.size() != out.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != out[i]) {
        throw ShapeError("concat: shape mismatch " + to_string(s) + " vs " +
                         to_string(g.shape(xs.front())));
      }
    }
    widths.push_back(s[detail::u(axis)]);
    out[detail::u(axis)] += s[detail::u(axis)];
  }
  const Index outer = detail::outer_size(out, axis), inner = detail::inner_size(out, axis);
  const Index total = out[detail::u(axis)];
  Tensor<S> y(out);
  Index offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor<S>& xv = g.value(xs[k]);
    const Index chunk = widths[k] * inner;
    for (Index o = 0; o < outer; ++o) {
      std::copy(xv.data() + o * chunk, xv.data() + (o + 1) * chunk,
                y.data() + (o * total + offset) * inner);
    }
    offset += widths[k];
  }
  return g.record(std::move(y), xs, [=](Graph<S>& gr, const Tensor<S>& gy) {
    Index offset = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const Index chunk = widths[k] * inner;
      if (gr.requires_grad(xs[k])) {
        Tensor<S>& dx = gr.grad_buffer(xs[k]);
        for (Index o = 0; o < outer; ++o) {
          const S* src = gy.data() + (o * total + offset) * inner;
          S* dst = dx.data() + o * chunk;
          for (Index i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      offset += widths[k];
    }
  });
}

// Selects indices start, start+stride, ... (count of them) along `axis`.
template <class S>
Var strided_slice(Graph<S>& g, Var x, int axis, Index start, Index stride, Index count) {
  const Shape& xs = g.shape(x);
  if (axis < 0 || axis >= static_cast<int>(xs.size())) throw ShapeError("strided_slice: bad axis");
  const Index len = xs[detail::u(axis)];
  if (start < 0 || stride < 1 || count < 1 || start + stride * (count - 1) >= len) {
    throw ShapeError("strided_slice: selection out of range for axis length " + std::to_string(len));
  }
  const Index outer = detail::outer_size(xs, axis), inner = detail::inner_size(xs, axis);
  Shape out = xs;
  out[detail::u(axis)] = count;
  const Tensor<S>& xv = g.value(x);
  Tensor<S> y(out);
  for (Index o = 0; o < outer; ++o) {
    for (Index k = 0; k < count; ++k) {
      const S* src = xv.data() + (o * len + start + k * stride) * inner;
      std::copy(src, src + inner, y.data() + (o * count + k) * inner);
    }
  }
  return g.record(std::move(y), {x}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    Tensor<S>& dx = gr.grad_buffer(x);
    for (Index o = 0; o < outer; ++o) {
      for (Index k = 0; k < count; ++k) {
        S* dst = dx.data() + (o * len + start + k * stride) * inner;
        const S* src = gy.data() + (o * count + k) * inner;
        for (Index i = 0; i < inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <class S>
Var slice(Graph<S>& g, Var x, int axis, Index start, Index count) {
  return strided_slice(g, x, axis, start, 1, count);
}

// (N, C) -> (N, C, T, H, W) by replication.
template <class S>
Var broadcast_thw(Graph<S>& g, Var x, Index t, Index h, Index w) {
  require_rank(g.shape(x), 2, "broadcast_thw");
  const Index n = g.shape(x)[0], c = g.shape(x)[1], vol = t * h * w;
  const Tensor<S>& xv = g.value(x);
  Tensor<S> y({n, c, t, h, w});
  for (Index i = 0; i < n * c; ++i) std::fill(y.data() + i * vol, y.data() + (i + 1) * vol, xv[i]);
  return g.record(std::move(y), {x}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    Tensor<S>& dx = gr.grad_buffer(x);
    for (Index i = 0; i < n * c; ++i) {
      S acc(0);
      for (Index j = 0; j < vol; ++j) acc += gy[i * vol + j];
      dx[i] += acc;
    }
  });
}

// 2x2 nearest-neighbour unpooling over the two trailing (spatial) axes.
template <class S>
Var unpool2x(Graph<S>& g, Var x) {
  const Shape& xs = g.shape(x);
  require_rank(xs, 5, "unpool2x");
  const Index planes = xs[0] * xs[1] * xs[2], h = xs[3], w = xs[4];
  const Tensor<S>& xv = g.value(x);
  Tensor<S> y({xs[0], xs[1], xs[2], 2 * h, 2 * w});
  for (Index p = 0; p < planes; ++p) {
    const S* src = xv.data() + p * h * w;
    S* dst = y.data() + p * 4 * h * w;
    for (Index i = 0; i < 2 * h; ++i)
      for (Index j = 0; j < 2 * w; ++j) dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
  }
  return g.record(std::move(y), {x}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    Tensor<S>& dx = gr.grad_buffer(x);
    for (Index p = 0; p < planes; ++p) {
      S* dst = dx.data() + p * h * w;
      const S* src = gy.data() + p * 4 * h * w;
      for (Index i = 0; i < 2 * h; ++i)
        for (Index j = 0; j < 2 * w; ++j) dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
    }
  });
}

// Output length of the dimension-aware downsampler along one axis.
inline Index downsampled_length(Index n) { return n > 1 ? (n + 1) / 2 : n; }

// Dimension-aware 2x average pooling over (T, H, W) of an (N, C, T, H, W)
// tensor. Axes of length 1 are left alone; an odd axis is zero-padded by one
// in front, and padded cells count towards the window average.
template <class S>
Var downsample(Graph<S>& g, Var x) {
  const Shape& xs = g.shape(x);
  require_rank(xs, 5, "downsample");
  const Index t = xs[2], h = xs[3], w = xs[4];
  const Index to = downsampled_length(t), ho = downsampled_length(h), wo = downsampled_length(w);
  const Index kt = t > 1 ? 2 : 1, kh = h > 1 ? 2 : 1, kw = w > 1 ? 2 : 1;
  const Index pt = (t > 1 && t % 2) ? 1 : 0, ph = (h > 1 && h % 2) ? 1 : 0,
              pw = (w > 1 && w % 2) ? 1 : 0;
  const real_t<S> inv = real_t<S>(1) / static_cast<real_t<S>>(kt * kh * kw);
  const Index planes = xs[0] * xs[1];
  const Tensor<S>& xv = g.value(x);
  Tensor<S> y({xs[0], xs[1], to, ho, wo});
  auto for_each_tap = [=](Index ot, Index oh, Index ow, auto&& fn) {
    for (Index a = 0; a < kt; ++a) {
      const Index it = ot * kt + a - pt;
      if (it < 0 || it >= t) continue;
      for (Index b = 0; b < kh; ++b) {
        const Index ih = oh * kh + b - ph;
        if (ih < 0 || ih >= h) continue;
        for (Index c = 0; c < kw; ++c) {
          const Index iw = ow * kw + c - pw;
          if (iw < 0 || iw >= w) continue;
          fn((it * h + ih) * w + iw);
        }
      }
    }
  };
  for (Index p = 0; p < planes; ++p) {
    const S* src = xv.data() + p * t * h * w;
    S* dst = y.data() + p * to * ho * wo;
    for (Index ot = 0; ot < to; ++ot)
      for (Index oh = 0; oh < ho; ++oh)
        for (Index ow = 0; ow < wo; ++ow) {
          S acc(0);
          for_each_tap(ot, oh, ow, [&](Index i) { acc += src[i]; });
          dst[(ot * ho + oh) * wo + ow] = acc * S(inv);
        }
  }
  return g.record(std::move(y), {x}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    Tensor<S>& dx = gr.grad_buffer(x);
    for (Index p = 0; p < planes; ++p) {
      S* dst = dx.data() + p * t * h * w;
      const S* src = gy.data() + p * to * ho * wo;
      for (Index ot = 0; ot < to; ++ot)
        for (Index oh = 0; oh < ho; ++oh)
          for (Index ow = 0; ow < wo; ++ow) {
            const S gv = src[(ot * ho + oh) * wo + ow] * S(inv);
            for_each_tap(ot, oh, ow, [&](Index i) { dst[i] += gv; });
          }
    }
  });
}

// Rows of a (K, C) table selected by label: -> (N, C).
template <class S>
Var gather_rows(Graph<S>& g, Var table, const std::vector<int>& labels) {
  require_rank(g.shape(table), 2, "gather_rows");
  const Index k = g.shape(table)[0], c = g.shape(table)[1];
  const Index n = static_cast<Index>(labels.size());
  for (int l : labels) {
    if (l < 0 || l >= k) throw std::out_of_range("gather_rows: label " + std::to_string(l));
  }
  const Tensor<S>& tv = g.value(table);
  Tensor<S> y({n, c});
  for (Index i = 0; i < n; ++i) {
    const Index r = labels[detail::u(i)];
    std::copy(tv.data() + r * c, tv.data() + (r + 1) * c, y.data() + i * c);
  }
  return g.record(std::move(y), {table}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    Tensor<S>& dt = gr.grad_buffer(table);
    for (Index i = 0; i < n; ++i) {
      const Index r = labels[detail::u(i)];
      for (Index j = 0; j < c; ++j) dt[r * c + j] += gy[i * c + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased (population) variance
  Index count = 0;          // elements per channel
};

// Normalizes each channel of (N, C, ...) with its batch statistics; no affine.
template <class S>
Var batch_normalize(Graph<S>& g, Var x, double eps, ChannelStats* stats_out = nullptr) {
  using std::sqrt;
  const Shape& xs = g.shape(x);
  if (xs.size() < 2) throw ShapeError("batch_normalize: rank >= 2 required");
  const Index n = xs[0], c = xs[1], inner = detail::inner_size(xs, 1), m = n * inner;
  const Tensor<S>& xv = g.value(x);
  Tensor<S> y(xs);
  auto inv_std = std::make_shared<std::vector<S>>(detail::u(c));
  auto means = std::make_shared<std::vector<S>>(detail::u(c));
  if (stats_out) *stats_out = ChannelStats{std::vector<double>(detail::u(c)),
                                           std::vector<double>(detail::u(c)), m};
  for (Index ch = 0; ch < c; ++ch) {
    S mu(0);
    for (Index i = 0; i < n; ++i) {
      const S* p = xv.data() + (i * c + ch) * inner;
      for (Index j = 0; j < inner; ++j) mu += p[j];
    }
    mu = mu / S(static_cast<real_t<S>>(m));
    S var(0);
    for (Index i = 0; i < n; ++i) {
      const S* p = xv.data() + (i * c + ch) * inner;
      for (Index j = 0; j < inner; ++j) var += (p[j] - mu) * (p[j] - mu);
    }
    var = var / S(static_cast<real_t<S>>(m));
    const S is = S(1) / sqrt(var + S(static_cast<real_t<S>>(eps)));
    (*inv_std)[detail::u(ch)] = is;
    (*means)[detail::u(ch)] = mu;
    for (Index i = 0; i < n; ++i) {
      const S* p = xv.data() + (i * c + ch) * inner;
      S* q = y.data() + (i * c + ch) * inner;
      for (Index j = 0; j < inner; ++j) q[j] = (p[j] - mu) * is;
    }
    if (stats_out) {
      stats_out->mean[detail::u(ch)] = static_cast<double>(value_of(mu));
      stats_out->var[detail::u(ch)] = static_cast<double>(value_of(var));
    }
  }
  return g.record(std::move(y), {x}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    const Tensor<S>& xv = gr.value(x);
    Tensor<S>& dx = gr.grad_buffer(x);
    const S inv_m = S(real_t<S>(1) / static_cast<real_t<S>>(m));
    for (Index ch = 0; ch < c; ++ch) {
      const S mu = (*means)[detail::u(ch)], is = (*inv_std)[detail::u(ch)];
      S sum_g(0), sum_gx(0);
      for (Index i = 0; i < n; ++i) {
        const Index base = (i * c + ch) * inner;
        for (Index j = 0; j < inner; ++j) {
          sum_g += gy[base + j];
          sum_gx += gy[base + j] * ((xv[base + j] - mu) * is);
        }
      }
      for (Index i = 0; i < n; ++i) {
        const Index base = (i * c + ch) * inner;
        for (Index j = 0; j < inner; ++j) {
          const S xhat = (xv[base + j] - mu) * is;
          dx[base + j] += is * (gy[base + j] - inv_m * sum_g - inv_m * xhat * sum_gx);
        }
      }
    }
  });
}

// Normalizes each channel with fixed statistics (inference mode).
template <class S>
Var fixed_normalize(Graph<S>& g, Var x, std::span<const double> mean, std::span<const double> var,
                    double eps) {
  const Shape& xs = g.shape(x);
  const Index n = xs[0], c = xs[1], inner = detail::inner_size(xs, 1);
  if (static_cast<Index>(mean.size()) != c || static_cast<Index>(var.size()) != c) {
    throw ShapeError("fixed_normalize: statistics do not match channel count");
  }
  std::vector<S> shift(detail::u(c)), mult(detail::u(c));
  for (Index ch = 0; ch < c; ++ch) {
    shift[detail::u(ch)] = S(static_cast<real_t<S>>(mean[detail::u(ch)]));
    mult[detail::u(ch)] =
        S(static_cast<real_t<S>>(1.0 / std::sqrt(var[detail::u(ch)] + eps)));
  }
  const Tensor<S>& xv = g.value(x);
  Tensor<S> y(xs);
  for (Index i = 0; i < n; ++i)
    for (Index ch = 0; ch < c; ++ch) {
      const Index base = (i * c + ch) * inner;
      for (Index j = 0; j < inner; ++j)
        y[base + j] = (xv[base + j] - shift[detail::u(ch)]) * mult[detail::u(ch)];
    }
  return g.record(std::move(y), {x}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    Tensor<S>& dx = gr.grad_buffer(x);
    for (Index i = 0; i < n; ++i)
      for (Index ch = 0; ch < c; ++ch) {
        const Index base = (i * c + ch) * inner;
        for (Index j = 0; j < inner; ++j) dx[base + j] += gy[base + j] * mult[detail::u(ch)];
      }
  });
}

// y = gamma * x + beta per channel. gamma/beta are (C) or per-sample (N, C).
template <class S>
Var channel_affine(Graph<S>& g, Var x, Var gamma, Var beta) {
  const Shape& xs = g.shape(x);
  const Index n = xs[0], c = xs[1], inner = detail::inner_size(xs, 1);
  const bool per_sample = g.shape(gamma).size() == 2;
  const Shape expect = per_sample ? Shape{n, c} : Shape{c};
  require_same_shape(g.shape(gamma), expect, "channel_affine gamma");
  require_same_shape(g.shape(beta), expect, "channel_affine beta");
  auto idx = [=](Index i, Index ch) { return per_sample ? i * c + ch : ch; };
  const Tensor<S>& xv = g.value(x);
  const Tensor<S>& gv = g.value(gamma);
  const Tensor<S>& bv = g.value(beta);
  Tensor<S> y(xs);
  for (Index i = 0; i < n; ++i)
    for (Index ch = 0; ch < c; ++ch) {
      const Index base = (i * c + ch) * inner;
      const S a = gv[idx(i, ch)], b = bv[idx(i, ch)];
      for (Index j = 0; j < inner; ++j) y[base + j] = xv[base + j] * a + b;
    }
  return g.record(std::move(y), {x, gamma, beta}, [=](Graph<S>& gr, const Tensor<S>& gy) {
    const Tensor<S>& xv = gr.value(x);
    const Tensor<S>& gv = gr.value(gamma);
    const bool nx = gr.requires_grad(x), ng = gr.requires_grad(gamma), nb = gr.requires_grad(beta);
    S* dx = nx ? gr.grad_buffer(x).data() : nullptr;
    S* dg = ng ? gr.grad_buffer(gamma).data() : nullptr;
    S* db = nb ? gr.grad_buffer(beta).data() : nullptr;
    for (Index i = 0; i < n; ++i)
      for (Index ch = 0; ch < c; ++ch) {
        const Index base = (i * c + ch) * inner;
        const S a = gv[idx(i, ch)];
        S sg(0), sgx(0);
        for (Index j = 0; j < inner; ++j) {
          sg += gy[base + j];
          sgx += gy[base + j] * xv[base + j];
          if (dx) dx[base + j] += gy[base + j] * a;
        }
        if (dg) dg[idx(i, ch)] += sgx;
        if (db) db[idx(i, ch)] += sg;
      }
  });
}

}  // namespace vidgan::ops
