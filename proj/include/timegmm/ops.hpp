/*
 * Copyright 2026 The TimeGMM Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <type_traits>
#include <vector>

#include "timegmm/autodiff.hpp"
#include "timegmm/tensor.hpp"

namespace timegmm {

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(ea, eb);
  }
  return out;
}

/// Element strides of `in` viewed with the broadcast shape `out` (0 on
/// broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> s(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    std::size_t o = i + (out.size() - in.size());
    s[o] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return s;
}

/// Calls f(out_index, a_index, b_index) for every element of `out`.
template <class F>
void broadcast_for_each(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t inner = out[r - 1], ia = sa[r - 1], ib = sb[r - 1];
  const std::size_t outer = numel(out) / inner;
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0, o = 0;
  for (std::size_t n = 0; n < outer; ++n) {
    std::size_t pa = oa, pb = ob;
    for (std::size_t j = 0; j < inner; ++j, ++o, pa += ia, pb += ib) f(o, pa, pb);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <class T>
T sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
T softplus(T x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <class T>
T normal_cdf(T x) {
  return T(0.5) * std::erfc(-x / std::numbers::sqrt2_v<T>);
}

template <class T>
T normal_pdf(T x) {
  return std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
}

struct Split3 {
  std::size_t outer, axis, inner;
};

inline Split3 split_at(const Shape& s, std::size_t axis) {
  if (axis >= s.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  Split3 r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with numpy-style broadcasting.

enum class BinaryKind { add, sub, mul, div };

template <class T>
Var<T> binary(Var<T> a, Var<T> b, BinaryKind kind) {
  Tape<T>& t = *a.tape;
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  Shape out_shape = detail::broadcast_shape(A.shape(), B.shape());
  auto sa = detail::broadcast_strides(A.shape(), out_shape);
  auto sb = detail::broadcast_strides(B.shape(), out_shape);
  Tensor<T> out(out_shape);
  T* o = out.data();
  const T* pa = A.data();
  const T* pb = B.data();
  const bool same = A.shape() == B.shape();
  switch (kind) {
    case BinaryKind::add:
      if (same) for (std::size_t i = 0; i < out.size(); ++i) o[i] = pa[i] + pb[i];
      else detail::broadcast_for_each(out_shape, sa, sb, [&](auto i, auto x, auto y) { o[i] = pa[x] + pb[y]; });
      break;
    case BinaryKind::sub:
      if (same) for (std::size_t i = 0; i < out.size(); ++i) o[i] = pa[i] - pb[i];
      else detail::broadcast_for_each(out_shape, sa, sb, [&](auto i, auto x, auto y) { o[i] = pa[x] - pb[y]; });
      break;
    case BinaryKind::mul:
      if (same) for (std::size_t i = 0; i < out.size(); ++i) o[i] = pa[i] * pb[i];
      else detail::broadcast_for_each(out_shape, sa, sb, [&](auto i, auto x, auto y) { o[i] = pa[x] * pb[y]; });
      break;
    case BinaryKind::div:
      if (same) for (std::size_t i = 0; i < out.size(); ++i) o[i] = pa[i] / pb[i];
      else detail::broadcast_for_each(out_shape, sa, sb, [&](auto i, auto x, auto y) { o[i] = pa[x] / pb[y]; });
      break;
  }
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {a, b},
                  [ia, ib, kind, out_shape, sa, sb](Tape<T>& tp, std::size_t self) {
    const T* g = tp.grad_ref(self).data();
    const T* va = tp.value(ia).data();
    const T* vb = tp.value(ib).data();
    const bool need_a = tp.requires_grad(ia), need_b = tp.requires_grad(ib);
    T* ga = need_a ? tp.grad_ref(ia).data() : nullptr;
    T* gb = need_b ? tp.grad_ref(ib).data() : nullptr;
    detail::broadcast_for_each(out_shape, sa, sb, [&](auto i, auto x, auto y) {
      switch (kind) {
        case BinaryKind::add:
          if (ga) ga[x] += g[i];
          if (gb) gb[y] += g[i];
          break;
        case BinaryKind::sub:
          if (ga) ga[x] += g[i];
          if (gb) gb[y] -= g[i];
          break;
        case BinaryKind::mul:
          if (ga) ga[x] += g[i] * vb[y];
          if (gb) gb[y] += g[i] * va[x];
          break;
        case BinaryKind::div:
          if (ga) ga[x] += g[i] / vb[y];
          if (gb) gb[y] -= g[i] * va[x] / (vb[y] * vb[y]);
          break;
      }
    });
  });
}

template <class T> Var<T> operator+(Var<T> a, Var<T> b) { return binary(a, b, BinaryKind::add); }
template <class T> Var<T> operator-(Var<T> a, Var<T> b) { return binary(a, b, BinaryKind::sub); }
template <class T> Var<T> operator*(Var<T> a, Var<T> b) { return binary(a, b, BinaryKind::mul); }
template <class T> Var<T> operator/(Var<T> a, Var<T> b) { return binary(a, b, BinaryKind::div); }

// ---------------------------------------------------------------------------
// Elementwise unary ops. `df(x, y)` is dy/dx given input x and output y.

template <class T, class F, class DF>
Var<T> unary(Var<T> x, F f, DF df) {
  const Tensor<T>& X = x.value();
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = f(X[i]);
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, df](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_ref(self);
    const auto& xv = tp.value(ix);
    const auto& yv = tp.value(self);
    auto& gx = tp.grad_ref(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

template <class T>
Var<T> scale(Var<T> x, std::type_identity_t<T> c) {
  return unary(x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <class T>
Var<T> shift(Var<T> x, std::type_identity_t<T> c) {
  return unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <class T> Var<T> operator-(Var<T> x) { return scale(x, T(-1)); }
template <class T> Var<T> operator*(Var<T> x, std::type_identity_t<T> c) { return scale(x, c); }
template <class T> Var<T> operator*(std::type_identity_t<T> c, Var<T> x) { return scale(x, c); }
template <class T> Var<T> operator+(Var<T> x, std::type_identity_t<T> c) { return shift(x, c); }
template <class T> Var<T> operator-(Var<T> x, std::type_identity_t<T> c) { return shift(x, -c); }

template <class T>
Var<T> exp(Var<T> x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(Var<T> x) {
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
Var<T> sqrt(Var<T> x) {
  return unary(x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <class T>
Var<T> square(Var<T> x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Var<T> softplus(Var<T> x) {
  return unary(x, [](T v) { return detail::softplus(v); },
               [](T v, T) { return detail::sigmoid(v); });
}

/// ln(softplus(x)) without the underflow of composing the two.
template <class T>
Var<T> log_softplus(Var<T> x) {
  return unary(
      x,
      [](T v) {
        T sp = detail::softplus(v);
        return sp > 0 ? std::log(sp) : v;
      },
      [](T v, T) {
        T sp = detail::softplus(v);
        return sp > 0 ? detail::sigmoid(v) / sp : T(1);
      });
}

/// Exact GELU, x * Phi(x).
template <class T>
Var<T> gelu(Var<T> x) {
  return unary(x, [](T v) { return v * detail::normal_cdf(v); },
               [](T v, T) { return detail::normal_cdf(v) + v * detail::normal_pdf(v); });
}

// ---------------------------------------------------------------------------
// Shape ops.

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_ref(self);
    auto& gx = tp.grad_ref(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

/// x[..., start:start+len] along the last axis.
template <class T>
Var<T> slice_last(Var<T> x, std::size_t start, std::size_t len) {
  const Shape& s = x.shape();
  if (s.empty() || start + len > s.back() || len == 0)
    throw DimensionError("slice [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") outside last axis of " +
                         shape_str(s));
  const std::size_t width = s.back();
  const std::size_t rows = x.value().size() / width;
  Shape os = s;
  os.back() = len;
  Tensor<T> out(os);
  const T* xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = xv[r * width + start + j];
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x},
                        [ix, rows, width, start, len](Tape<T>& tp, std::size_t self) {
    const T* g = tp.grad_ref(self).data();
    T* gx = tp.grad_ref(ix).data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j) gx[r * width + start + j] += g[r * len + j];
  });
}

/// out[i] = x.flat[index[i]]; backward scatters-adds.
template <class T>
Var<T> gather(Var<T> x, std::vector<std::size_t> index, Shape shape) {
  if (numel(shape) != index.size())
    throw DimensionError("gather index count " + std::to_string(index.size()) +
                         " does not match shape " + shape_str(shape));
  const auto& xv = x.value();
  Tensor<T> out(std::move(shape));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= xv.size()) throw DimensionError("gather index out of range");
    out[i] = xv[index[i]];
  }
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x},
                        [ix, index = std::move(index)](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_ref(self);
    auto& gx = tp.grad_ref(ix);
    for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions.

template <class T>
Var<T> sum(Var<T> x) {
  T acc = 0;
  for (T v : x.value().values()) acc += v;
  const std::size_t ix = x.id;
  return x.tape->record(Tensor<T>::scalar(acc), {x}, [ix](Tape<T>& tp, std::size_t self) {
    T g = tp.grad_ref(self)[0];
    auto& gx = tp.grad_ref(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

/// Sum over the last axis, keeping it with extent 1.
template <class T>
Var<T> sum_last(Var<T> x) {
  const Shape& s = x.shape();
  const std::size_t width = s.back(), rows = x.value().size() / width;
  Shape os = s;
  os.back() = 1;
  Tensor<T> out(os);
  const T* xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (std::size_t j = 0; j < width; ++j) acc += xv[r * width + j];
    out[r] = acc;
  }
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, rows, width](Tape<T>& tp, std::size_t self) {
    const T* g = tp.grad_ref(self).data();
    T* gx = tp.grad_ref(ix).data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < width; ++j) gx[r * width + j] += g[r];
  });
}

template <class T>
Var<T> mean_last(Var<T> x) {
  return scale(sum_last(x), T(1) / static_cast<T>(x.shape().back()));
}

/// log(sum(exp(x))) over the last axis (kept with extent 1), max-shifted.
template <class T>
Var<T> logsumexp_last(Var<T> x) {
  const Shape& s = x.shape();
  const std::size_t width = s.back(), rows = x.value().size() / width;
  Shape os = s;
  os.back() = 1;
  Tensor<T> out(os);
  const T* xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv + r * width;
    T m = *std::max_element(row, row + width);
    T acc = 0;
    for (std::size_t j = 0; j < width; ++j) acc += std::exp(row[j] - m);
    out[r] = m + std::log(acc);
  }
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, rows, width](Tape<T>& tp, std::size_t self) {
    const T* g = tp.grad_ref(self).data();
    const T* y = tp.value(self).data();
    const T* xv = tp.value(ix).data();
    T* gx = tp.grad_ref(ix).data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < width; ++j)
        gx[r * width + j] += g[r] * std::exp(xv[r * width + j] - y[r]);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra.

/// Plain 2-D product a[m,k] * b[k,n].
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw DimensionError("matmul shape mismatch: " + shape_str(sa) + " x " + shape_str(sb));
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  Tensor<T> out(Shape{m, n});
  detail::MatMap<T>(out.data(), m, n).noalias() =
      detail::ConstMatMap<T>(a.value().data(), m, k) * detail::ConstMatMap<T>(b.value().data(), k, n);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape<T>& tp, std::size_t self) {
    detail::ConstMatMap<T> g(tp.grad_ref(self).data(), m, n);
    if (tp.requires_grad(ia))
      detail::MatMap<T>(tp.grad_ref(ia).data(), m, k).noalias() +=
          g * detail::ConstMatMap<T>(tp.value(ib).data(), k, n).transpose();
    if (tp.requires_grad(ib))
      detail::MatMap<T>(tp.grad_ref(ib).data(), k, n).noalias() +=
          detail::ConstMatMap<T>(tp.value(ia).data(), m, k).transpose() * g;
  });
}

/// x[..., in] * W[in, out] (+ bias[out]); leading axes are flattened.
namespace detail {

template <class T>
Var<T> linear_impl(Var<T> x, Var<T> weight, std::optional<Var<T>> bias) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.empty() || sw.size() != 2 || sx.back() != sw[0])
    throw DimensionError("linear shape mismatch: " + shape_str(sx) + " x " + shape_str(sw));
  const std::size_t in = sw[0], outw = sw[1], rows = x.value().size() / in;
  if (bias && bias->shape() != Shape{outw})
    throw DimensionError("linear bias " + shape_str(bias->shape()) + " for output width " +
                         std::to_string(outw));
  Shape os = sx;
  os.back() = outw;
  Tensor<T> out(os);
  detail::MatMap<T> o(out.data(), rows, outw);
  o.noalias() = detail::ConstMatMap<T>(x.value().data(), rows, in) *
                detail::ConstMatMap<T>(weight.value().data(), in, outw);
  if (bias) o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias->value().data(), outw);
  const std::size_t ix = x.id, iw = weight.id;
  const std::optional<std::size_t> ib = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
  auto fn = [ix, iw, ib, rows, in, outw](Tape<T>& tp, std::size_t self) {
    detail::ConstMatMap<T> g(tp.grad_ref(self).data(), rows, outw);
    if (tp.requires_grad(ix))
      detail::MatMap<T>(tp.grad_ref(ix).data(), rows, in).noalias() +=
          g * detail::ConstMatMap<T>(tp.value(iw).data(), in, outw).transpose();
    if (tp.requires_grad(iw))
      detail::MatMap<T>(tp.grad_ref(iw).data(), in, outw).noalias() +=
          detail::ConstMatMap<T>(tp.value(ix).data(), rows, in).transpose() * g;
    if (ib && tp.requires_grad(*ib))
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(tp.grad_ref(*ib).data(), outw).noalias() +=
          g.colwise().sum();
  };
  if (bias) return x.tape->record(std::move(out), {x, weight, *bias}, fn);
  return x.tape->record(std::move(out), {x, weight}, fn);
}

}  // namespace detail

template <class T>
Var<T> linear(Var<T> x, Var<T> weight) {
  return detail::linear_impl<T>(x, weight, std::nullopt);
}

template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  return detail::linear_impl<T>(x, weight, bias);
}

// ---------------------------------------------------------------------------
// Normalization and attention.

namespace detail {

template <class T>
Var<T> layer_norm_impl(Var<T> x, std::optional<Var<T>> gain, std::optional<Var<T>> bias, T eps) {
  if (!(eps > 0)) throw Error("layer_norm eps must be positive");
  const std::size_t width = x.shape().back(), rows = x.value().size() / width;
  if ((gain && gain->shape() != Shape{width}) || (bias && bias->shape() != Shape{width}))
    throw DimensionError("layer_norm affine shape does not match width " + std::to_string(width));
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.value().size()), inv_std(rows);
  const T* xv = x.value().data();
  const T* gv = gain ? gain->value().data() : nullptr;
  const T* bv = bias ? bias->value().data() : nullptr;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv + r * width;
    T mu = 0;
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<T>(width);
    T var = 0;
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(width);
    T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < width; ++j) {
      T h = (row[j] - mu) * is;
      xhat[r * width + j] = h;
      T y = gv ? h * gv[j] : h;
      out[r * width + j] = bv ? y + bv[j] : y;
    }
  }
  const std::size_t ix = x.id;
  const std::optional<std::size_t> ig = gain ? std::optional<std::size_t>(gain->id) : std::nullopt;
  const std::optional<std::size_t> ibias = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
  auto fn = [ix, ig, ibias, rows, width, xhat = std::move(xhat),
             inv_std = std::move(inv_std)](Tape<T>& tp, std::size_t self) {
    const T* g = tp.grad_ref(self).data();
    const T* gv = ig ? tp.value(*ig).data() : nullptr;
    if (ig && tp.requires_grad(*ig)) {
      T* gg = tp.grad_ref(*ig).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < width; ++j) gg[j] += g[r * width + j] * xhat[r * width + j];
    }
    if (ibias && tp.requires_grad(*ibias)) {
      T* gb = tp.grad_ref(*ibias).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < width; ++j) gb[j] += g[r * width + j];
    }
    if (!tp.requires_grad(ix)) return;
    T* gx = tp.grad_ref(ix).data();
    std::vector<T> dh(width);
    for (std::size_t r = 0; r < rows; ++r) {
      T m1 = 0, m2 = 0;
      for (std::size_t j = 0; j < width; ++j) {
        dh[j] = gv ? g[r * width + j] * gv[j] : g[r * width + j];
        m1 += dh[j];
        m2 += dh[j] * xhat[r * width + j];
      }
      m1 /= static_cast<T>(width);
      m2 /= static_cast<T>(width);
      for (std::size_t j = 0; j < width; ++j)
        gx[r * width + j] += inv_std[r] * (dh[j] - m1 - xhat[r * width + j] * m2);
    }
  };
  if (gain && bias) return x.tape->record(std::move(out), {x, *gain, *bias}, fn);
  if (gain) return x.tape->record(std::move(out), {x, *gain}, fn);
  if (bias) return x.tape->record(std::move(out), {x, *bias}, fn);
  return x.tape->record(std::move(out), {x}, fn);
}

}  // namespace detail

/// Normalizes over the last axis to zero mean and unit variance (no affine).
template <class T>
Var<T> layer_norm(Var<T> x, std::type_identity_t<T> eps) {
  return detail::layer_norm_impl<T>(x, std::nullopt, std::nullopt, eps);
}

/// Normalizes over the last axis, then applies per-feature gain and bias.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, std::type_identity_t<T> eps) {
  return detail::layer_norm_impl<T>(x, gain, bias, eps);
}

/// Softmax along `axis` with max subtraction.
template <class T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  auto sp = detail::split_at(x.shape(), axis);
  Tensor<T> out(x.shape());
  const T* xv = x.value().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.axis * sp.inner + in;
      T m = xv[base];
      for (std::size_t k = 1; k < sp.axis; ++k) m = std::max(m, xv[base + k * sp.inner]);
      T z = 0;
      for (std::size_t k = 0; k < sp.axis; ++k) {
        T e = std::exp(xv[base + k * sp.inner] - m);
        out[base + k * sp.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < sp.axis; ++k) out[base + k * sp.inner] /= z;
    }
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, sp](Tape<T>& tp, std::size_t self) {
    const T* g = tp.grad_ref(self).data();
    const T* y = tp.value(self).data();
    T* gx = tp.grad_ref(ix).data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.axis * sp.inner + in;
        T dot = 0;
        for (std::size_t k = 0; k < sp.axis; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.axis; ++k)
          gx[base + k * sp.inner] += y[base + k * sp.inner] * (g[base + k * sp.inner] - dot);
      }
  });
}

template <class T>
Var<T> softmax(Var<T> x) {
  return softmax(x, x.rank() - 1);
}

/// Multi-head scaled dot-product attention on already-projected q, k, v of
/// shape [S, L, D] (or [L, D]); softmax runs over the key axis and heads
/// split D into equal contiguous slices.
template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads) {
  const Shape& s = q.shape();
  if (s != k.shape() || s != v.shape() || (s.size() != 2 && s.size() != 3))
    throw DimensionError("attention expects equal [S,L,D] q/k/v, got " + shape_str(s) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  const std::size_t seqs = s.size() == 3 ? s[0] : 1;
  const std::size_t len = s[s.size() - 2], width = s.back();
  if (heads == 0 || width % heads != 0)
    throw DimensionError("width " + std::to_string(width) + " not divisible by " +
                         std::to_string(heads) + " heads");
  const std::size_t dh = width / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  Tensor<T> out(s);
  std::vector<T> probs(seqs * heads * len * len);
  const T* Q = q.value().data();
  const T* K = k.value().data();
  const T* V = v.value().data();
  for (std::size_t b = 0; b < seqs; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      T* P = probs.data() + (b * heads + h) * len * len;
      const std::size_t off = b * len * width + h * dh;
      for (std::size_t i = 0; i < len; ++i) {
        T m = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < len; ++j) {
          T dot = 0;
          for (std::size_t c = 0; c < dh; ++c) dot += Q[off + i * width + c] * K[off + j * width + c];
          P[i * len + j] = dot * sc;
          m = std::max(m, P[i * len + j]);
        }
        T z = 0;
        for (std::size_t j = 0; j < len; ++j) {
          P[i * len + j] = std::exp(P[i * len + j] - m);
          z += P[i * len + j];
        }
        for (std::size_t j = 0; j < len; ++j) P[i * len + j] /= z;
        for (std::size_t c = 0; c < dh; ++c) {
          T acc = 0;
          for (std::size_t j = 0; j < len; ++j) acc += P[i * len + j] * V[off + j * width + c];
          out[off + i * width + c] = acc;
        }
      }
    }
  const std::size_t iq = q.id, ik = k.id, iv = v.id;
  return q.tape->record(std::move(out), {q, k, v},
                        [iq, ik, iv, seqs, heads, len, width, dh, sc,
                         probs = std::move(probs)](Tape<T>& tp, std::size_t self) {
    const T* G = tp.grad_ref(self).data();
    const T* Q = tp.value(iq).data();
    const T* K = tp.value(ik).data();
    const T* V = tp.value(iv).data();
    T* gQ = tp.requires_grad(iq) ? tp.grad_ref(iq).data() : nullptr;
    T* gK = tp.requires_grad(ik) ? tp.grad_ref(ik).data() : nullptr;
    T* gV = tp.requires_grad(iv) ? tp.grad_ref(iv).data() : nullptr;
    std::vector<T> dP(len * len);
    for (std::size_t b = 0; b < seqs; ++b)
      for (std::size_t h = 0; h < heads; ++h) {
        const T* P = probs.data() + (b * heads + h) * len * len;
        const std::size_t off = b * len * width + h * dh;
        for (std::size_t i = 0; i < len; ++i)
          for (std::size_t j = 0; j < len; ++j) {
            T acc = 0;
            for (std::size_t c = 0; c < dh; ++c) acc += G[off + i * width + c] * V[off + j * width + c];
            dP[i * len + j] = acc;
          }
        if (gV)
          for (std::size_t j = 0; j < len; ++j)
            for (std::size_t c = 0; c < dh; ++c) {
              T acc = 0;
              for (std::size_t i = 0; i < len; ++i) acc += P[i * len + j] * G[off + i * width + c];
              gV[off + j * width + c] += acc;
            }
        for (std::size_t i = 0; i < len; ++i) {
          T dot = 0;
          for (std::size_t j = 0; j < len; ++j) dot += dP[i * len + j] * P[i * len + j];
          for (std::size_t j = 0; j < len; ++j) dP[i * len + j] = P[i * len + j] * (dP[i * len + j] - dot) * sc;
        }
        if (gQ)
          for (std::size_t i = 0; i < len; ++i)
            for (std::size_t c = 0; c < dh; ++c) {
              T acc = 0;
              for (std::size_t j = 0; j < len; ++j) acc += dP[i * len + j] * K[off + j * width + c];
              gQ[off + i * width + c] += acc;
            }
        if (gK)
          for (std::size_t j = 0; j < len; ++j)
            for (std::size_t c = 0; c < dh; ++c) {
              T acc = 0;
              for (std::size_t i = 0; i < len; ++i) acc += dP[i * len + j] * Q[off + i * width + c];
              gK[off + j * width + c] += acc;
            }
      }
  });
}

/// Moving average over the last axis with edge-replication padding; output
/// length equals input length. `kernel` must be odd.
template <class T>
Var<T> moving_average_last(Var<T> x, std::size_t kernel) {
  const std::size_t width = x.shape().back(), rows = x.value().size() / width;
  if (kernel == 0 || kernel % 2 == 0) throw Error("moving average kernel must be odd and >= 1");
  if (kernel > width)
    throw DimensionError("moving average kernel " + std::to_string(kernel) +
                         " exceeds series length " + std::to_string(width));
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kernel / 2);
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(width) - 1;
  const T inv = T(1) / static_cast<T>(kernel);
  Tensor<T> out(x.shape());
  const T* xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::ptrdiff_t t = 0; t <= last; ++t) {
      T acc = 0;
      for (std::ptrdiff_t j = t - half; j <= t + half; ++j)
        acc += xv[r * width + static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(j, 0, last))];
      out[r * width + static_cast<std::size_t>(t)] = acc * inv;
    }
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x},
                        [ix, rows, width, half, last, inv](Tape<T>& tp, std::size_t self) {
    const T* g = tp.grad_ref(self).data();
    T* gx = tp.grad_ref(ix).data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::ptrdiff_t t = 0; t <= last; ++t) {
        T gt = g[r * width + static_cast<std::size_t>(t)] * inv;
        for (std::ptrdiff_t j = t - half; j <= t + half; ++j)
          gx[r * width + static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(j, 0, last))] += gt;
      }
  });
}

}  // namespace timegmm
