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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "timegmm/autodiff.hpp"

namespace timegmm {

/// |a - n| / max(1e-8, |a| + |n|).
template <class T>
T relative_error(T analytic, T numeric) {
  return std::abs(analytic - numeric) /
         std::max(T(1e-8), std::abs(analytic) + std::abs(numeric));
}

template <class T>
struct GradCheckEntry {
  std::string id;
  std::size_t checked = 0;
  T max_rel_error = 0;
  std::size_t worst_index = 0;
  T analytic = 0;
  T numeric = 0;
};

template <class T>
struct GradCheckReport {
  std::vector<GradCheckEntry<T>> entries;
  T tolerance = 0;

  T max_rel_error() const {
    T m = 0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  bool passed() const { return max_rel_error() <= tolerance; }
};

struct GradCheckOptions {
  /// Elements checked per parameter; 0 checks all. When limited, indices are
  /// spread evenly across the parameter.
  std::size_t max_elements_per_param = 0;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// for every parameter in `params`. `loss_fn(tape)` must build a scalar loss
/// on the given tape from `params` and be deterministic.
template <class T, class F>
GradCheckReport<T> grad_check(F&& loss_fn, ParameterSet<T>& params, T step, T tolerance,
                              GradCheckOptions options = {}) {
  if (!(step > 0)) throw Error("grad_check step must be positive");
  auto evaluate = [&]() {
    Tape<T> tape(&params, false);
    return loss_fn(tape).item();
  };
  const T base = evaluate();
  if (evaluate() != base)
    throw NumericalError("grad_check: loss function is not deterministic");

  {
    Tape<T> tape(&params, true);
    tape.backward(loss_fn(tape));
  }
  GradCheckReport<T> report;
  report.tolerance = tolerance;
  for (auto& p : params) {
    GradCheckEntry<T> e;
    e.id = p.id;
    const std::size_t n = p.value.size();
    std::size_t count = options.max_elements_per_param ? std::min(n, options.max_elements_per_param) : n;
    for (std::size_t c = 0; c < count; ++c) {
      std::size_t j = count == n ? c : (c * n) / count;
      const T saved = p.value[j];
      p.value[j] = saved + step;
      const T up = evaluate();
      p.value[j] = saved - step;
      const T down = evaluate();
      p.value[j] = saved;
      const T numeric = (up - down) / (T(2) * step);
      const T err = relative_error(p.grad[j], numeric);
      if (err >= e.max_rel_error) {
        e.max_rel_error = err;
        e.worst_index = j;
        e.analytic = p.grad[j];
        e.numeric = numeric;
      }
      ++e.checked;
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace timegmm
