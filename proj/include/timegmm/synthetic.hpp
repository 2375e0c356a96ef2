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

#include <json.hpp>

#include "timegmm/data.hpp"
#include "timegmm/error.hpp"
#include "timegmm/rng.hpp"

namespace timegmm {

enum class SyntheticKind { bimodal_ar, regime_shift, sine_mixture };

inline std::string to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::bimodal_ar: return "bimodal-ar";
    case SyntheticKind::regime_shift: return "regime-shift";
    case SyntheticKind::sine_mixture: return "sine-mixture";
  }
  return "?";
}

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
  if (s == "bimodal-ar") return SyntheticKind::bimodal_ar;
  if (s == "regime-shift") return SyntheticKind::regime_shift;
  if (s == "sine-mixture") return SyntheticKind::sine_mixture;
  throw ConfigError("unknown synthetic kind '" + s + "' (bimodal-ar | regime-shift | sine-mixture)");
}

/// Level/scale applied from timestep `start` until the next entry.
struct RegimeSegment {
  std::size_t start = 0;
  double level = 0.0;
  double scale = 1.0;
};

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::bimodal_ar;
  std::size_t variables = 1;
  std::size_t length = 4000;
  std::uint64_t seed = 1;
  /// AR(1) coefficient of the latent process.
  double ar = 0.0;
  /// Innovation mixture: x_t = ar * x_{t-1} + eps_t, eps_t ~ sum_k w_k N(loc_k, scale_k^2).
  std::vector<double> noise_locs{-1.0, 1.0};
  std::vector<double> noise_scales{0.1, 0.1};
  std::vector<double> noise_weights{0.5, 0.5};
  /// Deterministic seasonal terms added on top of the AR process.
  std::vector<double> periods;
  std::vector<double> amplitudes;
  /// Regime-shift schedule; empty means identity (level 0, scale 1).
  std::vector<RegimeSegment> schedule;

  void validate() const {
    if (variables == 0 || length < 2) throw ConfigError("synthetic series needs variables >= 1 and length >= 2");
    if (!(std::abs(ar) < 1.0)) throw ConfigError("synthetic AR coefficient must satisfy |ar| < 1");
    if (noise_locs.empty() || noise_locs.size() != noise_scales.size() || noise_locs.size() != noise_weights.size())
      throw ConfigError("synthetic noise mixture needs equally many locs, scales and weights");
    double total = 0;
    for (std::size_t k = 0; k < noise_weights.size(); ++k) {
      if (!(noise_weights[k] > 0) || !(noise_scales[k] >= 0))
        throw ConfigError("synthetic noise weights must be > 0 and scales >= 0");
      total += noise_weights[k];
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("synthetic noise weights must sum to 1");
    if (periods.size() != amplitudes.size()) throw ConfigError("synthetic periods and amplitudes differ in length");
    for (double p : periods)
      if (!(p > 0)) throw ConfigError("synthetic periods must be positive");
    for (std::size_t i = 1; i < schedule.size(); ++i)
      if (schedule[i].start <= schedule[i - 1].start)
        throw ConfigError("regime schedule starts must be strictly increasing");
  }
};

struct SyntheticSeries {
  SeriesFrame frame;
  nlohmann::json descriptor;
};

/// Exact law of x_{t+1} given x_t for the bimodal AR process (before any
/// seasonal or regime terms): component k has mean ar * x_t + loc_k.
struct ConditionalMixture {
  std::vector<double> weights, means, scales;
};

inline ConditionalMixture bimodal_conditional(const SyntheticSpec& spec, double x_t) {
  ConditionalMixture m{spec.noise_weights, {}, spec.noise_scales};
  for (double loc : spec.noise_locs) m.means.push_back(spec.ar * x_t + loc);
  return m;
}

namespace detail {

inline nlohmann::json spec_json(const SyntheticSpec& spec) {
  nlohmann::json sched = nlohmann::json::array();
  for (const auto& s : spec.schedule) sched.push_back({{"start", s.start}, {"level", s.level}, {"scale", s.scale}});
  return {{"kind", to_string(spec.kind)},
          {"variables", spec.variables},
          {"length", spec.length},
          {"seed", spec.seed},
          {"ar", spec.ar},
          {"noise", {{"locs", spec.noise_locs}, {"scales", spec.noise_scales}, {"weights", spec.noise_weights}}},
          {"periods", spec.periods},
          {"amplitudes", spec.amplitudes},
          {"schedule", sched}};
}

/// AR(1) with mixture innovations plus seasonal terms, one row per variable.
inline Tensor<double> ar_mixture_process(const SyntheticSpec& spec, Tensor<double>* latent = nullptr) {
  Tensor<double> out({spec.variables, spec.length});
  if (latent) *latent = Tensor<double>({spec.variables, spec.length});
  constexpr std::size_t burn_in = 200;
  for (std::size_t v = 0; v < spec.variables; ++v) {
    Rng rng = Rng::named(spec.seed, "synthetic/" + std::to_string(v));
    double x = 0;
    for (std::size_t t = 0; t < burn_in + spec.length; ++t) {
      std::size_t k = rng.categorical(std::span<const double>(spec.noise_weights));
      double eps = spec.noise_locs[k] + spec.noise_scales[k] * rng.normal();
      x = spec.ar * x + eps;
      if (t < burn_in) continue;
      const std::size_t i = t - burn_in;
      double season = 0;
      for (std::size_t j = 0; j < spec.periods.size(); ++j)
        season += spec.amplitudes[j] * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / spec.periods[j] +
                                                0.7 * static_cast<double>(v));
      out.at(v, i) = x + season;
      if (latent) latent->at(v, i) = x;
    }
  }
  return out;
}

inline SeriesFrame index_frame(Tensor<double> values) {
  SeriesFrame f;
  for (std::size_t v = 0; v < values.extent(0); ++v) f.names.push_back("x" + std::to_string(v));
  f.timestamps.resize(values.extent(1));
  for (std::size_t t = 0; t < f.timestamps.size(); ++t) f.timestamps[t] = static_cast<double>(t);
  f.timestamp_kind = TimestampKind::index;
  f.frequency = "index";
  f.values = std::move(values);
  return f;
}

}  // namespace detail

/// x_t = ar * x_{t-1} + eps_t with two-(or more-)component Gaussian-mixture
/// innovations. The descriptor records the exact one-step conditional law.
inline SyntheticSeries gen_bimodal_ar(SyntheticSpec spec) {
  spec.kind = SyntheticKind::bimodal_ar;
  spec.validate();
  SyntheticSeries s{detail::index_frame(detail::ar_mixture_process(spec)), detail::spec_json(spec)};
  s.descriptor["conditional_law"] = {
      {"form", "x[t+1] | x[t] ~ sum_k w_k * Normal(ar * x[t] + loc_k, scale_k^2)"},
      {"weights", spec.noise_weights},
      {"locs", spec.noise_locs},
      {"scales", spec.noise_scales},
      {"ar", spec.ar}};
  return s;
}

/// Base AR-mixture series with a piecewise level and scale schedule:
/// y_t = level(t) + scale(t) * x_t.
inline SyntheticSeries gen_regime_shift(SyntheticSpec spec) {
  spec.kind = SyntheticKind::regime_shift;
  spec.validate();
  Tensor<double> x = detail::ar_mixture_process(spec);
  std::size_t seg = 0;
  for (std::size_t t = 0; t < spec.length; ++t) {
    while (seg + 1 < spec.schedule.size() && spec.schedule[seg + 1].start <= t) ++seg;
    if (spec.schedule.empty() || t < spec.schedule.front().start) continue;
    const auto& r = spec.schedule[seg];
    for (std::size_t v = 0; v < spec.variables; ++v) x.at(v, t) = r.level + r.scale * x.at(v, t);
  }
  return {detail::index_frame(std::move(x)), detail::spec_json(spec)};
}

/// Sum of sinusoids plus AR-mixture noise.
inline SyntheticSeries gen_sine_mixture(SyntheticSpec spec) {
  spec.kind = SyntheticKind::sine_mixture;
  if (spec.periods.empty()) {
    spec.periods = {24.0, 168.0};
    spec.amplitudes = {1.0, 0.5};
  }
  spec.validate();
  return {detail::index_frame(detail::ar_mixture_process(spec)), detail::spec_json(spec)};
}

inline SyntheticSeries generate(const SyntheticSpec& spec) {
  switch (spec.kind) {
    case SyntheticKind::bimodal_ar: return gen_bimodal_ar(spec);
    case SyntheticKind::regime_shift: return gen_regime_shift(spec);
    case SyntheticKind::sine_mixture: return gen_sine_mixture(spec);
  }
  throw ConfigError("unknown synthetic kind");
}

}  // namespace timegmm
