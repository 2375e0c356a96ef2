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

#include <cstddef>
#include <string>

#include "timegmm/error.hpp"

namespace timegmm {

/// Shapes of one TimeGMM instance.
struct ModelDims {
  std::size_t variables = 1;
  std::size_t history = 96;      // L_h
  std::size_t horizon = 96;      // L_f
  std::size_t d_model = 128;     // D
  std::size_t patch_len = 16;
  std::size_t patch_stride = 8;
  std::size_t steps_per_token = 8;  // L_f / P_f
  std::size_t encoder_layers = 2;   // M
  std::size_t decoder_layers = 2;   // N
  std::size_t components = 3;       // K
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;

  /// Full patches plus one right-edge-padded patch when the stride leaves a tail.
  std::size_t history_patches() const {
    const std::size_t span = history - patch_len;
    return span / patch_stride + 1 + (span % patch_stride ? 1 : 0);
  }
  std::size_t horizon_tokens() const { return horizon / steps_per_token; }

  void validate() const {
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw ConfigError(msg);
    };
    need(variables >= 1, "model.variables must be >= 1");
    need(history >= 2, "model.history must be >= 2");
    need(horizon >= 1, "model.horizon must be >= 1");
    need(patch_len >= 1 && patch_len <= history, "model.patch_len must be in [1, history]");
    need(patch_stride >= 1, "model.patch_stride must be >= 1");
    need(steps_per_token >= 1 && horizon % steps_per_token == 0,
         "model.horizon (" + std::to_string(horizon) + ") must be divisible by model.steps_per_token (" +
             std::to_string(steps_per_token) + ")");
    need(components >= 1, "model.components must be >= 1");
    need(heads >= 1 && d_model % heads == 0, "model.d_model must be divisible by model.heads");
    need(ffn_mult >= 1, "model.ffn_mult must be >= 1");
  }
};

struct ModelConfig {
  ModelDims dims;
  double init_std = 0.02;
  double grin_eps = 1e-5;
  double grin_scale_floor = 1e-4;
  std::size_t decomp_kernel = 25;
  double sigma_min = 1e-3;
  bool decoder_residual = false;
  /// false replaces GRIN with dataset-level standardization (ablation).
  bool use_grin = true;

  void validate() const {
    dims.validate();
    if (decomp_kernel == 0 || decomp_kernel % 2 == 0) throw ConfigError("grin.decomp_kernel must be odd");
    if (decomp_kernel > dims.history) throw ConfigError("grin.decomp_kernel exceeds model.history");
    if (!(grin_eps > 0)) throw ConfigError("grin.eps must be > 0");
    if (!(grin_scale_floor > 0)) throw ConfigError("grin.scale_floor must be > 0");
    if (!(sigma_min > 0)) throw ConfigError("decoder.sigma_min must be > 0");
    if (!(init_std > 0)) throw ConfigError("model.init_std must be > 0");
  }
};

}  // namespace timegmm
