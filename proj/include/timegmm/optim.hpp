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
#include <vector>

#include "timegmm/autodiff.hpp"

namespace timegmm {

struct AdamWConfig {
  double lr = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay: p <- p (1 - lr wd), then the
/// bias-corrected Adam step. Moments are kept in parameter order.
template <class T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParameterSet<T>& params, AdamWConfig cfg) : cfg_(cfg) {
    if (!(cfg.lr > 0)) throw ConfigError("training.lr must be > 0");
    if (cfg.weight_decay < 0) throw ConfigError("training.weight_decay must be >= 0");
    for (const auto& p : params) {
      m_.emplace_back(p.value.shape());
      v_.emplace_back(p.value.shape());
    }
  }

  const AdamWConfig& config() const { return cfg_; }
  std::size_t steps() const { return steps_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

  void restore(std::size_t steps, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw DataError("optimizer state does not match parameters");
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m[i].shape() != m_[i].shape() || v[i].shape() != v_[i].shape())
        throw DataError("optimizer moment shape mismatch at parameter " + std::to_string(i));
    steps_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
  }

  void step(ParameterSet<T>& params) {
    if (params.size() != m_.size()) throw Error("optimizer was built for a different parameter set");
    for (const auto& p : params)
      for (T g : p.grad.values())
        if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter '" + p.id + "'");
    ++steps_;
    const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
    const T c1 = T(1) - std::pow(b1, T(steps_));
    const T c2 = T(1) - std::pow(b2, T(steps_));
    const T lr = T(cfg_.lr), decay = T(1) - T(cfg_.lr) * T(cfg_.weight_decay), eps = T(cfg_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const T g = p.grad[j];
        m[j] = b1 * m[j] + (1 - b1) * g;
        v[j] = b2 * v[j] + (1 - b2) * g * g;
        p.value[j] = p.value[j] * decay - lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::size_t steps_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

template <class T>
T global_grad_norm(const ParameterSet<T>& params) {
  T s = 0;
  for (const auto& p : params)
    for (T g : p.grad.values()) s += g * g;
  return std::sqrt(s);
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class T>
T clip_grad_norm(ParameterSet<T>& params, T max_norm) {
  const T norm = global_grad_norm(params);
  if (max_norm > 0 && norm > max_norm) {
    const T f = max_norm / norm;
    for (auto& p : params)
      for (auto& g : p.grad.values()) g *= f;
  }
  return norm;
}

}  // namespace timegmm
