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

#include <cstdint>

#include "timegmm/decoder.hpp"
#include "timegmm/encoder.hpp"
#include "timegmm/gmm.hpp"
#include "timegmm/grin.hpp"

namespace timegmm {

/// Per-variable dataset statistics used when GRIN is disabled.
template <class T>
struct DatasetStats {
  Tensor<T> mean;    // [V]
  Tensor<T> stddev;  // [V]
};

/// Mixture parameters on the tape, each [B, V, L_f, K]; mu and sigma are in
/// data units, w_raw is the head output before softplus/softmax.
template <class T>
struct ForwardResult {
  Var<T> w_raw, mu, sigma;
  Var<T> mu_norm, sigma_norm;
  Var<T> condition;  // E_C [B*V, D]
};

/// Full TimeGMM: GRIN -> decomposition -> dual-branch encoder -> adaLN
/// decoder -> GMM head -> denorm. Variables are folded into the sequence
/// axis (s = b*V + v) and share all weights except the GRIN affine.
template <class T>
class TimeGmm {
 public:
  TimeGmm(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng = Rng::named(seed, "init");
    const std::size_t V = cfg_.dims.variables;
    if (cfg_.use_grin) {
      const T raw = grin_raw_for_scale(T(1), T(cfg_.grin_scale_floor));
      a_raw_ = params_.add("grin.a_raw", Tensor<T>({V}, raw));
      b_ = params_.add("grin.b", Tensor<T>({V}));
    }
    encoder_ = make_encoder(params_, rng, cfg_);
    decoder_ = make_decoder(params_, rng, cfg_);
    stats_.mean = Tensor<T>({V}, T(0));
    stats_.stddev = Tensor<T>({V}, T(1));
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  const DatasetStats<T>& dataset_stats() const { return stats_; }
  void set_dataset_stats(DatasetStats<T> s) {
    const Shape vs{cfg_.dims.variables};
    if (s.mean.shape() != vs || s.stddev.shape() != vs) throw DimensionError("dataset stats must be [V]");
    for (T v : s.stddev.values())
      if (!(v > 0)) throw NumericalError("dataset stddev must be positive");
    stats_ = std::move(s);
  }

  /// Normalized input [B, V, L_h] plus whatever the denorm side needs.
  struct Normalized {
    Var<T> x;
    std::optional<GrinState<T>> grin;
  };

  Normalized normalize(Tape<T>& tape, Var<T> history) const {
    check_input(tape, history);
    if (cfg_.use_grin) {
      Var<T> a = grin_scale(tape.param(a_raw_), T(cfg_.grin_scale_floor));
      auto out = grin_norm(history, a, tape.param(b_), T(cfg_.grin_eps));
      return {out.normalized, out.state};
    }
    const std::size_t V = cfg_.dims.variables;
    Var<T> m = tape.constant(stats_.mean.reshaped({1, V, 1}));
    Var<T> s = tape.constant(stats_.stddev.reshaped({1, V, 1}));
    return {(history - m) / s, std::nullopt};
  }

  /// E_C for every (window, variable) pair, [B*V, D].
  Var<T> condition(Tape<T>& tape, Var<T> normalized) const {
    const std::size_t B = normalized.extent(0), V = normalized.extent(1), L = normalized.extent(2);
    Var<T> flat = reshape(normalized, {B * V, L});
    return encode(tape, encoder_, series_decomp(flat, cfg_.decomp_kernel), cfg_.dims);
  }

  ForwardResult<T> forward(Tape<T>& tape, const Tensor<T>& history) const {
    return forward(tape, tape.constant(history));
  }

  ForwardResult<T> forward(Tape<T>& tape, Var<T> history) const {
    const auto& d = cfg_.dims;
    const std::size_t B = history.rank() == 3 ? history.extent(0) : 0;
    Normalized n = normalize(tape, history);
    Var<T> cond = condition(tape, n.x);
    RawGmm<T> raw = decode(tape, decoder_, cond, cfg_);
    const Shape out{B, d.variables, d.horizon, d.components};
    ForwardResult<T> r;
    r.condition = cond;
    r.w_raw = reshape(raw.w_raw, out);
    r.mu_norm = reshape(raw.mu, out);
    r.sigma_norm = reshape(normalized_scale(raw.sigma_raw, T(cfg_.sigma_min)), out);
    if (n.grin) {
      std::tie(r.mu, r.sigma) = grin_denorm(r.mu_norm, r.sigma_norm, *n.grin);
    } else {
      Var<T> m = tape.constant(stats_.mean.reshaped({1, d.variables, 1, 1}));
      Var<T> s = tape.constant(stats_.stddev.reshaped({1, d.variables, 1, 1}));
      r.mu = r.mu_norm * s + m;
      r.sigma = r.sigma_norm * s;
    }
    return r;
  }

  /// Composite loss for a batch: history [B, V, L_h], future [B, V, L_f].
  LossTerms<T> loss(Tape<T>& tape, const Tensor<T>& history, const Tensor<T>& future,
                    const LossWeights& lw) const {
    ForwardResult<T> r = forward(tape, history);
    return loss(tape, r, future, lw);
  }

  LossTerms<T> loss(Tape<T>& tape, const ForwardResult<T>& r, const Tensor<T>& future,
                    const LossWeights& lw) const {
    const auto& d = cfg_.dims;
    const Shape expect{r.mu.extent(0), d.variables, d.horizon};
    if (future.shape() != expect)
      throw DimensionError("future must be " + shape_str(expect) + ", got " + shape_str(future.shape()));
    Var<T> y = tape.constant(future.reshaped({expect[0], expect[1], expect[2], 1}));
    return total_loss(r.w_raw, r.mu, r.sigma, y, lw);
  }

  /// Test-time forecast with softmax weights, [B, V, L_f, K]. No gradients.
  GmmParams<T> predict(const Tensor<T>& history) const {
    Tape<T> tape(const_cast<ParameterSet<T>*>(&params_), false);
    ForwardResult<T> r = forward(tape, history);
    GmmParams<T> p;
    p.w = normalize_weights(r.w_raw.value());
    p.mu = r.mu.value();
    p.sigma = r.sigma.value();
    p.normalized = true;
    return p;
  }

  /// Training-time weights softplus(w_raw), [B, V, L_f, K].
  Tensor<T> raw_weights(const Tensor<T>& history) const {
    Tape<T> tape(const_cast<ParameterSet<T>*>(&params_), false);
    return softplus(forward(tape, history).w_raw).value();
  }

 private:
  void check_input(Tape<T>& tape, Var<T> history) const {
    if (tape.parameters() != &params_) throw Error("tape is not bound to this model's parameters");
    const auto& d = cfg_.dims;
    if (history.rank() != 3 || history.extent(1) != d.variables || history.extent(2) != d.history)
      throw DimensionError("history must be [B, " + std::to_string(d.variables) + ", " + std::to_string(d.history) +
                           "], got " + shape_str(history.shape()));
  }

  ModelConfig cfg_;
  ParameterSet<T> params_;
  std::size_t a_raw_ = 0, b_ = 0;
  EncoderWeights encoder_;
  DecoderWeights decoder_;
  DatasetStats<T> stats_;
};

}  // namespace timegmm
