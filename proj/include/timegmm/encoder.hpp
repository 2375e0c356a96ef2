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

#include <string>
#include <vector>

#include "timegmm/grin.hpp"
#include "timegmm/model_config.hpp"
#include "timegmm/nn.hpp"

namespace timegmm {

/// One temporal branch (trend or seasonal): patch MLP, learned positions,
/// M pre-norm transformer layers, and a flatten head to a D-vector.
struct BranchWeights {
  nn::LinearRef embed_hidden, embed_out;
  std::size_t position = 0;
  std::vector<nn::EncoderLayerRef> layers;
  nn::LinearRef head;
};

struct EncoderWeights {
  BranchWeights trend, seasonal;
  nn::LayerNormRef fuse;
};

template <class T>
BranchWeights make_branch(ParameterSet<T>& ps, Rng& rng, const std::string& id, const ModelConfig& cfg) {
  const auto& d = cfg.dims;
  BranchWeights b;
  b.embed_hidden = nn::make_linear(ps, rng, id + ".embed.fc1", d.patch_len, d.d_model, cfg.init_std);
  b.embed_out = nn::make_linear(ps, rng, id + ".embed.fc2", d.d_model, d.d_model, cfg.init_std);
  b.position = ps.add(id + ".pos", nn::truncated_normal<T>({d.history_patches(), d.d_model}, rng, cfg.init_std));
  for (std::size_t l = 0; l < d.encoder_layers; ++l)
    b.layers.push_back(nn::make_encoder_layer(ps, rng, id + ".layer" + std::to_string(l), d.d_model, d.heads,
                                              d.ffn_mult * d.d_model, cfg.init_std));
  b.head = nn::make_linear(ps, rng, id + ".head", d.history_patches() * d.d_model, d.d_model, cfg.init_std);
  return b;
}

template <class T>
EncoderWeights make_encoder(ParameterSet<T>& ps, Rng& rng, const ModelConfig& cfg) {
  EncoderWeights e;
  e.trend = make_branch(ps, rng, "encoder.trend", cfg);
  e.seasonal = make_branch(ps, rng, "encoder.seasonal", cfg);
  e.fuse = nn::make_layer_norm(ps, "encoder.fuse", cfg.dims.d_model);
  return e;
}

/// Flat source offsets of each patch row for a length-`length` series.
inline std::vector<std::size_t> patch_offsets(std::size_t length, std::size_t patch_len, std::size_t stride) {
  if (patch_len == 0 || stride == 0) throw ConfigError("patch length and stride must be >= 1");
  if (patch_len > length)
    throw DimensionError("patch length " + std::to_string(patch_len) + " exceeds series length " +
                         std::to_string(length));
  const std::size_t span = length - patch_len;
  const std::size_t full = span / stride + 1;
  const std::size_t count = full + (span % stride ? 1 : 0);
  std::vector<std::size_t> idx;
  idx.reserve(count * patch_len);
  for (std::size_t p = 0; p < count; ++p)
    for (std::size_t j = 0; j < patch_len; ++j) idx.push_back(std::min(p * stride + j, length - 1));
  return idx;
}

/// [S, L] -> [S, P_h, patch_len]; row p = x[p*stride : p*stride + patch_len],
/// the optional tail patch replicates the last value.
template <class T>
Var<T> patchify(Var<T> x, std::size_t patch_len, std::size_t stride) {
  if (x.rank() != 2) throw DimensionError("patchify expects [S, L], got " + shape_str(x.shape()));
  const std::size_t seqs = x.extent(0), length = x.extent(1);
  auto row = patch_offsets(length, patch_len, stride);
  const std::size_t patches = row.size() / patch_len;
  std::vector<std::size_t> idx;
  idx.reserve(seqs * row.size());
  for (std::size_t s = 0; s < seqs; ++s)
    for (auto o : row) idx.push_back(s * length + o);
  return gather(x, std::move(idx), {seqs, patches, patch_len});
}

/// [S, P_h, patch_len] -> E' [S, D].
template <class T>
Var<T> encode_branch(Tape<T>& tape, const BranchWeights& w, Var<T> patches) {
  Var<T> e = nn::apply(tape, w.embed_out, gelu(nn::apply(tape, w.embed_hidden, patches)));
  e = e + tape.param(w.position);
  for (const auto& layer : w.layers) e = nn::apply(tape, layer, e);
  const std::size_t seqs = e.extent(0);
  return nn::apply(tape, w.head, reshape(e, {seqs, e.extent(1) * e.extent(2)}));
}

/// E_C = LayerNorm(E'_T + E'_S) with learnable affine.
template <class T>
Var<T> fuse(Tape<T>& tape, const nn::LayerNormRef& ln, Var<T> trend, Var<T> seasonal) {
  return nn::apply(tape, ln, trend + seasonal);
}

/// Full temporal encoder on decomposed, normalized series [S, L_h].
template <class T>
Var<T> encode(Tape<T>& tape, const EncoderWeights& w, const DecompPair<T>& parts, const ModelDims& dims) {
  Var<T> et = encode_branch(tape, w.trend, patchify(parts.trend, dims.patch_len, dims.patch_stride));
  Var<T> es = encode_branch(tape, w.seasonal, patchify(parts.seasonal, dims.patch_len, dims.patch_stride));
  return fuse(tape, w.fuse, et, es);
}

}  // namespace timegmm
