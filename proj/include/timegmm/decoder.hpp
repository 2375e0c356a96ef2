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
#include <numbers>
#include <string>
#include <vector>

#include "timegmm/model_config.hpp"
#include "timegmm/nn.hpp"

namespace timegmm {

/// Standard normal quantile by bisection on erfc; only used at init.
inline double normal_quantile(double p) {
  double lo = -10, hi = 10;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * std::erfc(-mid / std::numbers::sqrt2) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// One adaLN-conditioned block. `cond_out` produces six D-vectors in the
/// order alpha1, beta1, gamma1, alpha2, beta2, gamma2.
struct DecoderBlockWeights {
  nn::LinearRef cond_hidden, cond_out;
  nn::AttentionRef attn;
  nn::FeedForwardRef ffn;
};

struct DecoderWeights {
  nn::LinearRef w_pred;  // [D, P_f * D], no bias
  std::vector<DecoderBlockWeights> blocks;
  nn::LinearRef head_hidden, head_out;
};

template <class T>
DecoderWeights make_decoder(ParameterSet<T>& ps, Rng& rng, const ModelConfig& cfg) {
  const auto& d = cfg.dims;
  const std::size_t D = d.d_model;
  DecoderWeights w;
  w.w_pred = nn::make_linear(ps, rng, "decoder.w_pred", D, d.horizon_tokens() * D, cfg.init_std, false);
  for (std::size_t j = 0; j < d.decoder_layers; ++j) {
    const std::string id = "decoder.block" + std::to_string(j);
    DecoderBlockWeights b;
    b.cond_hidden = nn::make_linear(ps, rng, id + ".cond.fc1", D, D, cfg.init_std);
    b.cond_out = nn::make_linear(ps, rng, id + ".cond.fc2", D, 6 * D, cfg.init_std);
    // alpha and gamma start at 1, beta at 0: without residual paths a zero
    // gate would kill the signal entirely.
    auto bias = ps[*b.cond_out.bias].value.values();
    for (std::size_t c = 0; c < 6; ++c)
      for (std::size_t i = 0; i < D; ++i) bias[c * D + i] = (c == 1 || c == 4) ? T(0) : T(1);
    b.attn = nn::make_attention(ps, rng, id + ".attn", D, d.heads, cfg.init_std);
    b.ffn = nn::make_ffn(ps, rng, id + ".ffn", D, d.ffn_mult * D, cfg.init_std);
    w.blocks.push_back(b);
  }
  w.head_hidden = nn::make_linear(ps, rng, "decoder.head.fc1", D, D, cfg.init_std);
  w.head_out = nn::make_linear(ps, rng, "decoder.head.fc2", D, d.steps_per_token * 3 * d.components, cfg.init_std);
  // Component means start at the normal quantiles (k + 1/2)/K of the
  // standardized input. Identical starting components receive identical
  // gradients and only separate through the small random weights.
  const std::size_t K = d.components;
  auto head_bias = ps[*w.head_out.bias].value.values();
  for (std::size_t j = 0; j < d.steps_per_token; ++j)
    for (std::size_t k = 0; k < K; ++k)
      head_bias[j * 3 * K + K + k] = T(normal_quantile((double(k) + 0.5) / double(K)));
  return w;
}

/// Z_0 = W_pred E_C reshaped to [S, P_f, D].
template <class T>
Var<T> project_init(Tape<T>& tape, const nn::LinearRef& w_pred, Var<T> cond, std::size_t tokens) {
  if (cond.rank() != 2) throw DimensionError("project_init expects E_C [S, D], got " + shape_str(cond.shape()));
  const std::size_t seqs = cond.extent(0), D = cond.extent(1);
  if (w_pred.out != tokens * D) throw DimensionError("W_pred does not map to P_f * D outputs");
  return reshape(nn::apply(tape, w_pred, cond), {seqs, tokens, D});
}

template <class T>
struct Modulation {
  Var<T> alpha1, beta1, gamma1, alpha2, beta2, gamma2;  // each [S, 1, D]
};

template <class T>
Modulation<T> modulation(Tape<T>& tape, const DecoderBlockWeights& w, Var<T> cond) {
  const std::size_t seqs = cond.extent(0), D = cond.extent(1);
  Var<T> m = nn::apply(tape, w.cond_out, gelu(nn::apply(tape, w.cond_hidden, cond)));
  m = reshape(m, {seqs, 1, 6 * D});
  auto chunk = [&](std::size_t c) { return slice_last(m, c * D, D); };
  return {chunk(0), chunk(1), chunk(2), chunk(3), chunk(4), chunk(5)};
}

/// Z' = a1 * Attn(g1 * LN#(Z) + b1);  Z_j = a2 * FFN(g2 * LN#(Z') + b2).
/// `residual` adds Z and Z' back after each gated sub-layer.
template <class T>
Var<T> decoder_block(Tape<T>& tape, const DecoderBlockWeights& w, Var<T> z, Var<T> cond, bool residual,
                     T eps = T(1e-5)) {
  const Modulation<T> m = modulation(tape, w, cond);
  Var<T> h = m.alpha1 * nn::apply(tape, w.attn, m.gamma1 * layer_norm(z, eps) + m.beta1);
  if (residual) h = h + z;
  Var<T> out = m.alpha2 * nn::apply(tape, w.ffn, m.gamma2 * layer_norm(h, eps) + m.beta2);
  if (residual) out = out + h;
  return out;
}

/// Raw head outputs, each [S, L_f, K].
template <class T>
struct RawGmm {
  Var<T> w_raw, mu, sigma_raw;
};

/// MLP_dec on each of the P_f tokens, then [S, P_f, steps*3K] -> [S, L_f, 3K]
/// split along the last axis as (w_raw | mu | sigma_raw).
template <class T>
RawGmm<T> decode_gmm_params(Tape<T>& tape, const DecoderWeights& w, Var<T> z, const ModelDims& dims) {
  const std::size_t K = dims.components;
  if (dims.horizon % dims.steps_per_token)
    throw ConfigError("horizon " + std::to_string(dims.horizon) + " is not divisible by steps_per_token " +
                      std::to_string(dims.steps_per_token));
  const std::size_t seqs = z.extent(0);
  Var<T> out = nn::apply(tape, w.head_out, gelu(nn::apply(tape, w.head_hidden, z)));
  out = reshape(out, {seqs, dims.horizon, 3 * K});
  return {slice_last(out, 0, K), slice_last(out, K, K), slice_last(out, 2 * K, K)};
}

/// Positive training-time weights and normalized-space scales.
template <class T>
Var<T> training_weights(Var<T> w_raw) {
  return softplus(w_raw);
}

template <class T>
Var<T> normalized_scale(Var<T> sigma_raw, T sigma_min) {
  return shift(softplus(sigma_raw), sigma_min);
}

/// E_C -> Z_N -> raw head outputs.
template <class T>
RawGmm<T> decode(Tape<T>& tape, const DecoderWeights& w, Var<T> cond, const ModelConfig& cfg) {
  Var<T> z = project_init(tape, w.w_pred, cond, cfg.dims.horizon_tokens());
  for (const auto& b : w.blocks) z = decoder_block(tape, b, z, cond, cfg.decoder_residual);
  return decode_gmm_params(tape, w, z, cfg.dims);
}

}  // namespace timegmm
