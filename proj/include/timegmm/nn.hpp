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

#include <optional>
#include <string>

#include "timegmm/ops.hpp"
#include "timegmm/rng.hpp"

namespace timegmm::nn {

/// Parameters are referenced by index into the model's ParameterSet so that
/// copies of a model (replicas, checkpoints) stay self-consistent.
struct LinearRef {
  std::size_t weight = 0;
  std::optional<std::size_t> bias;
  std::size_t in = 0, out = 0;
};

struct LayerNormRef {
  std::size_t gain = 0, bias = 0;
};

struct AttentionRef {
  LinearRef wq, wk, wv, wo;
  std::size_t heads = 1;
};

struct FeedForwardRef {
  LinearRef up, down;
};

/// Pre-norm transformer encoder layer.
struct EncoderLayerRef {
  LayerNormRef ln1, ln2;
  AttentionRef attn;
  FeedForwardRef ffn;
};

template <class T>
Tensor<T> truncated_normal(Shape shape, Rng& rng, double stddev) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.truncated_normal(0.0, stddev));
  return t;
}

/// Weight [in, out] ~ truncated normal(0, init_std); bias zero. The weight id
/// is `id`, the bias `id + ".bias"`.
template <class T>
LinearRef make_linear(ParameterSet<T>& ps, Rng& rng, const std::string& id, std::size_t in, std::size_t out,
                      double init_std, bool bias = true) {
  LinearRef r;
  r.in = in;
  r.out = out;
  r.weight = ps.add(id, truncated_normal<T>({in, out}, rng, init_std));
  if (bias) r.bias = ps.add(id + ".bias", Tensor<T>({out}));
  return r;
}

template <class T>
LayerNormRef make_layer_norm(ParameterSet<T>& ps, const std::string& id, std::size_t width) {
  return {ps.add(id + ".gain", Tensor<T>({width}, T(1))), ps.add(id + ".bias", Tensor<T>({width}))};
}

template <class T>
AttentionRef make_attention(ParameterSet<T>& ps, Rng& rng, const std::string& id, std::size_t width,
                            std::size_t heads, double init_std) {
  if (heads == 0 || width % heads)
    throw ConfigError("d_model " + std::to_string(width) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  return {make_linear(ps, rng, id + ".wq", width, width, init_std),
          // no key bias: it shifts every logit of a query equally, so softmax
          // ignores it and its gradient is identically zero
          make_linear(ps, rng, id + ".wk", width, width, init_std, false),
          make_linear(ps, rng, id + ".wv", width, width, init_std),
          make_linear(ps, rng, id + ".wo", width, width, init_std), heads};
}

template <class T>
FeedForwardRef make_ffn(ParameterSet<T>& ps, Rng& rng, const std::string& id, std::size_t width,
                        std::size_t hidden, double init_std) {
  return {make_linear(ps, rng, id + ".up", width, hidden, init_std),
          make_linear(ps, rng, id + ".down", hidden, width, init_std)};
}

template <class T>
EncoderLayerRef make_encoder_layer(ParameterSet<T>& ps, Rng& rng, const std::string& id, std::size_t width,
                                   std::size_t heads, std::size_t hidden, double init_std) {
  return {make_layer_norm(ps, id + ".ln1", width), make_layer_norm(ps, id + ".ln2", width),
          make_attention(ps, rng, id + ".attn", width, heads, init_std),
          make_ffn(ps, rng, id + ".ffn", width, hidden, init_std)};
}

template <class T>
Var<T> apply(Tape<T>& tape, const LinearRef& r, Var<T> x) {
  if (r.bias) return linear(x, tape.param(r.weight), tape.param(*r.bias));
  return linear(x, tape.param(r.weight));
}

template <class T>
Var<T> apply(Tape<T>& tape, const LayerNormRef& r, Var<T> x, T eps = T(1e-5)) {
  return layer_norm(x, tape.param(r.gain), tape.param(r.bias), eps);
}

template <class T>
Var<T> apply(Tape<T>& tape, const AttentionRef& r, Var<T> x) {
  Var<T> q = apply(tape, r.wq, x);
  Var<T> k = apply(tape, r.wk, x);
  Var<T> v = apply(tape, r.wv, x);
  return apply(tape, r.wo, attention(q, k, v, r.heads));
}

template <class T>
Var<T> apply(Tape<T>& tape, const FeedForwardRef& r, Var<T> x) {
  return apply(tape, r.down, gelu(apply(tape, r.up, x)));
}

template <class T>
Var<T> apply(Tape<T>& tape, const EncoderLayerRef& r, Var<T> x) {
  Var<T> h = x + apply(tape, r.attn, apply(tape, r.ln1, x));
  return h + apply(tape, r.ffn, apply(tape, r.ln2, h));
}

}  // namespace timegmm::nn
