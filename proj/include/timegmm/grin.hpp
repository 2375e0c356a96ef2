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

#include <cmath>
#include <cstddef>

#include "timegmm/ops.hpp"

namespace timegmm {

/// Effective per-variable scale a = softplus(a_raw) + floor, which keeps the
/// GRIN scale strictly positive so denormalized mixture scales stay positive.
template <class T>
Var<T> grin_scale(Var<T> a_raw, T floor) {
  return shift(softplus(a_raw), floor);
}

/// Unconstrained value whose effective scale is exactly `a`.
template <class T>
T grin_raw_for_scale(T a, T floor) {
  return std::log(std::expm1(a - floor));
}

/// Per-window instance statistics plus the affine parameters in effect.
/// Shapes: mean/var [B, V, 1]; scale/shift [V].
template <class T>
struct GrinState {
  Var<T> mean;
  Var<T> var;
  Var<T> stddev;  // sqrt(var + eps)
  Var<T> scale;   // effective a
  Var<T> shift;   // b
  T eps = T(1e-5);
};

template <class T>
struct GrinNormOutput {
  Var<T> normalized;  // [B, V, L_h]
  GrinState<T> state;
};

/// x~ = a (x - E[x]) / sqrt(Var[x] + eps) + b, statistics taken over the last
/// axis of `history` [B, V, L_h] (population variance). `scale` and `shift`
/// are the effective per-variable a and b, shape [V].
template <class T>
GrinNormOutput<T> grin_norm(Var<T> history, Var<T> scale, Var<T> shift, T eps) {
  const Shape& s = history.shape();
  if (s.size() != 3) throw DimensionError("grin_norm expects [B,V,L], got " + shape_str(s));
  if (s[2] < 2) throw DimensionError("grin_norm needs at least 2 history steps");
  if (scale.shape() != Shape{s[1]} || shift.shape() != Shape{s[1]})
    throw DimensionError("grin affine parameters must have shape [V]");
  if (!history.value().all_finite()) throw NumericalError("grin_norm: non-finite input");
  if (!(eps > 0)) throw ConfigError("grin eps must be positive");
  Var<T> mean = mean_last(history);
  Var<T> centered = history - mean;
  Var<T> var = mean_last(square(centered));
  Var<T> stddev = sqrt(var + eps);
  Var<T> a = reshape(scale, {1, s[1], 1});
  Var<T> b = reshape(shift, {1, s[1], 1});
  Var<T> out = (centered / stddev) * a + b;
  return {out, GrinState<T>{mean, var, stddev, scale, shift, eps}};
}

/// Inverse map on mixture parameters of shape [B, V, L_f, K]:
/// mu = std (mu~ - b) / a + E[x],  sigma = std * sigma~ / a.
template <class T>
std::pair<Var<T>, Var<T>> grin_denorm(Var<T> mu_norm, Var<T> sigma_norm, const GrinState<T>& st) {
  const Shape& s = mu_norm.shape();
  if (s.size() != 4 || sigma_norm.shape() != s)
    throw DimensionError("grin_denorm expects matching [B,V,L,K] parameters");
  const std::size_t b = s[0], v = s[1];
  if (st.mean.shape() != Shape{b, v, 1}) throw DimensionError("grin state does not match parameter batch");
  for (T a : st.scale.value().values())
    if (!(a > 0)) throw NumericalError("grin_denorm: non-positive effective scale");
  Var<T> stddev = reshape(st.stddev, {b, v, 1, 1});
  Var<T> mean = reshape(st.mean, {b, v, 1, 1});
  Var<T> a = reshape(st.scale, {1, v, 1, 1});
  Var<T> shift = reshape(st.shift, {1, v, 1, 1});
  Var<T> factor = stddev / a;
  return {(mu_norm - shift) * factor + mean, sigma_norm * factor};
}

template <class T>
struct DecompPair {
  Var<T> trend;
  Var<T> seasonal;
  std::size_t kernel = 0;
};

/// Trend = edge-replicated moving average over the last axis; seasonal = x - trend.
template <class T>
DecompPair<T> series_decomp(Var<T> x, std::size_t kernel) {
  if (kernel > x.shape().back())
    throw DimensionError("decomposition kernel " + std::to_string(kernel) + " exceeds series length " +
                         std::to_string(x.shape().back()));
  Var<T> trend = moving_average_last(x, kernel);
  return {trend, x - trend, kernel};
}

}  // namespace timegmm
