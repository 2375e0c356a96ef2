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
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "timegmm/ops.hpp"
#include "timegmm/rng.hpp"

namespace timegmm {

// ---------------------------------------------------------------------------
// Single-cell mixture functions. A cell is one (variable, step) with K
// components; weights need not sum to one unless stated.

template <class T>
struct MixtureCell {
  std::span<const T> w, mu, sigma;
  std::size_t size() const { return w.size(); }
};

template <class T>
T log_normal_density(T y, T mu, T sigma) {
  const T z = (y - mu) / sigma;
  return T(-0.5) * z * z - std::log(sigma) - T(0.5) * std::log(T(2) * std::numbers::pi_v<T>);
}

template <class T>
T pdf(T y, const MixtureCell<T>& c) {
  T p = 0;
  for (std::size_t k = 0; k < c.size(); ++k) p += c.w[k] * std::exp(log_normal_density(y, c.mu[k], c.sigma[k]));
  return p;
}

/// log-sum-exp over {ln w_k + ln N_k}.
template <class T>
T log_pdf(T y, const MixtureCell<T>& c) {
  T top = -std::numeric_limits<T>::infinity();
  std::vector<T> terms(c.size());
  for (std::size_t k = 0; k < c.size(); ++k) {
    terms[k] = std::log(c.w[k]) + log_normal_density(y, c.mu[k], c.sigma[k]);
    top = std::max(top, terms[k]);
  }
  if (!std::isfinite(top)) return top;
  T acc = 0;
  for (T t : terms) acc += std::exp(t - top);
  return top + std::log(acc);
}

template <class T>
T cdf(T y, const MixtureCell<T>& c) {
  T p = 0;
  for (std::size_t k = 0; k < c.size(); ++k) p += c.w[k] * detail::normal_cdf((y - c.mu[k]) / c.sigma[k]);
  return p;
}

template <class T>
T mixture_mean(const MixtureCell<T>& c) {
  T m = 0, s = 0;
  for (std::size_t k = 0; k < c.size(); ++k) {
    m += c.w[k] * c.mu[k];
    s += c.w[k];
  }
  return m / s;
}

/// Bisection on the CDF; result within `tol` of the true quantile.
template <class T>
T quantile(T q, const MixtureCell<T>& c, T tol = T(1e-10)) {
  if (!(q > 0 && q < 1)) throw Error("quantile level must lie in (0, 1), got " + std::to_string(double(q)));
  T lo = c.mu[0], hi = c.mu[0], smax = 0;
  for (std::size_t k = 0; k < c.size(); ++k) {
    lo = std::min(lo, c.mu[k]);
    hi = std::max(hi, c.mu[k]);
    smax = std::max(smax, c.sigma[k]);
  }
  lo -= 40 * smax;
  hi += 40 * smax;
  while (cdf(lo, c) > q) lo -= (hi - lo);
  while (cdf(hi, c) < q) hi += (hi - lo);
  for (int it = 0; it < 400 && hi - lo > tol; ++it) {
    const T mid = lo + (hi - lo) / 2;
    if (mid <= lo || mid >= hi) break;
    (cdf(mid, c) < q ? lo : hi) = mid;
  }
  return lo + (hi - lo) / 2;
}

template <class T>
T sample(const MixtureCell<T>& c, Rng& rng) {
  const std::size_t k = rng.categorical(c.w);
  return static_cast<T>(rng.normal(double(c.mu[k]), double(c.sigma[k])));
}

/// E|X - m| for X ~ N(0, s2) shifted by m: m(2 Phi(m/s) - 1) + 2 s phi(m/s).
template <class T>
T crps_a(T m, T s2) {
  if (s2 <= 0) return std::abs(m);
  const T s = std::sqrt(s2);
  const T z = m / s;
  return m * (2 * detail::normal_cdf(z) - 1) + 2 * s * detail::normal_pdf(z);
}

/// Closed-form CRPS of a Gaussian mixture with normalized weights.
template <class T>
T crps_closed_form(T y, const MixtureCell<T>& c) {
  T first = 0, second = 0;
  const std::size_t K = c.size();
  for (std::size_t k = 0; k < K; ++k) {
    first += c.w[k] * crps_a(y - c.mu[k], c.sigma[k] * c.sigma[k]);
    for (std::size_t l = 0; l < K; ++l)
      second += c.w[k] * c.w[l] * crps_a(c.mu[k] - c.mu[l], c.sigma[k] * c.sigma[k] + c.sigma[l] * c.sigma[l]);
  }
  return first - T(0.5) * second;
}

struct MonteCarloEstimate {
  double mean = 0, stderr_ = 0;
};

/// Energy-form estimator E|X - y| - 1/2 E|X - X'| from n independent pairs.
template <class T>
MonteCarloEstimate crps_monte_carlo(T y, const MixtureCell<T>& c, std::size_t n, Rng& rng) {
  double sum = 0, sum2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = double(sample(c, rng)), xp = double(sample(c, rng));
    const double t = std::abs(x - double(y)) - 0.5 * std::abs(x - xp);
    sum += t;
    sum2 += t * t;
  }
  const double m = sum / double(n);
  const double var = std::max(0.0, sum2 / double(n) - m * m) * double(n) / double(n - 1);
  return {m, std::sqrt(var / double(n))};
}

// ---------------------------------------------------------------------------
// Forecast object.

/// w, mu, sigma share a shape whose last axis is K (usually [V, L_f, K]).
template <class T>
struct GmmParams {
  Tensor<T> w, mu, sigma;
  bool normalized = false;

  std::size_t components() const { return w.shape().back(); }
  std::size_t cells() const { return w.size() / components(); }
  MixtureCell<T> cell(std::size_t i) const {
    const std::size_t K = components();
    return {w.values().subspan(i * K, K), mu.values().subspan(i * K, K), sigma.values().subspan(i * K, K)};
  }

  void validate() const {
    if (w.shape() != mu.shape() || w.shape() != sigma.shape()) throw DimensionError("GmmParams shape mismatch");
    for (T s : sigma.values())
      if (!(s > 0)) throw NumericalError("GmmParams: non-positive scale");
    if (normalized)
      for (std::size_t i = 0; i < cells(); ++i) {
        T total = 0;
        for (T v : cell(i).w) {
          if (!(v > 0)) throw NumericalError("GmmParams: non-positive normalized weight");
          total += v;
        }
        if (std::abs(total - 1) > 1e-9) throw NumericalError("GmmParams: weights do not sum to 1");
      }
  }
};

/// Softmax of raw head weights over the K axis.
template <class T>
Tensor<T> normalize_weights(const Tensor<T>& w_raw) {
  Tape<T> tape(nullptr, false);
  return softmax(tape.constant(w_raw)).value();
}

template <class T>
Tensor<T> cell_map(const GmmParams<T>& p, T (*fn)(const MixtureCell<T>&)) {
  Shape s = p.w.shape();
  s.back() = 1;
  Tensor<T> out(s);
  for (std::size_t i = 0; i < p.cells(); ++i) out[i] = fn(p.cell(i));
  return out;
}

/// Point forecast, shape of w with the K axis dropped to 1.
template <class T>
Tensor<T> mixture_mean(const GmmParams<T>& p) {
  return cell_map<T>(p, [](const MixtureCell<T>& c) { return mixture_mean(c); });
}

// ---------------------------------------------------------------------------
// Training losses on the tape. Inputs are [..., K] head outputs in data units
// (mu, sigma already denormalized) plus the raw weights; y is [..., 1].

template <class T>
Var<T> mixture_log_density(Var<T> w_raw, Var<T> mu, Var<T> sigma, Var<T> y) {
  const T half_log_2pi = T(0.5) * std::log(T(2) * std::numbers::pi_v<T>);
  Var<T> z = (y - mu) / sigma;
  Var<T> log_n = shift(scale(square(z), T(-0.5)) - log(sigma), -half_log_2pi);
  return logsumexp_last(log_softplus(w_raw) + log_n);
}

/// mean over all cells of -log p(y), w = softplus(w_raw).
template <class T>
Var<T> nll_loss(Var<T> w_raw, Var<T> mu, Var<T> sigma, Var<T> y) {
  return -mean(mixture_log_density(w_raw, mu, sigma, y));
}

/// MSE of the mixture mean, weights divided by their sum.
template <class T>
Var<T> mean_loss(Var<T> w_raw, Var<T> mu, Var<T> y) {
  Var<T> w = softplus(w_raw);
  Var<T> m = sum_last(w * mu) / sum_last(w);
  return mean(square(m - y));
}

template <class T>
Var<T> weight_loss(Var<T> w_raw) {
  return mean(square(shift(sum_last(softplus(w_raw)), T(-1))));
}

struct LossWeights {
  double nll = 1.0, mean = 1.0, weight = 20.0;
};

template <class T>
struct LossTerms {
  Var<T> total, nll, mean, weight;
};

template <class T>
LossTerms<T> total_loss(Var<T> w_raw, Var<T> mu, Var<T> sigma, Var<T> y, const LossWeights& lw) {
  LossTerms<T> t;
  t.nll = nll_loss(w_raw, mu, sigma, y);
  t.mean = mean_loss(w_raw, mu, y);
  t.weight = weight_loss(w_raw);
  t.total = scale(t.nll, T(lw.nll)) + scale(t.mean, T(lw.mean)) + scale(t.weight, T(lw.weight));
  return t;
}

// ---------------------------------------------------------------------------
// Forecast export.

inline const std::vector<double>& export_quantiles() {
  static const std::vector<double> q{0.05, 0.25, 0.5, 0.75, 0.95};
  return q;
}

/// One window's forecast, params shaped [V, L_f, K] with normalized weights.
template <class T>
nlohmann::json forecast_json(const GmmParams<T>& p, std::size_t origin, const std::vector<std::string>& names) {
  const Shape& s = p.w.shape();
  if (s.size() != 3) throw DimensionError("forecast export expects [V, L_f, K]");
  nlohmann::json j;
  j["origin"] = origin;
  j["components"] = s[2];
  j["quantile_levels"] = export_quantiles();
  nlohmann::json vars = nlohmann::json::array();
  for (std::size_t v = 0; v < s[0]; ++v) {
    nlohmann::json steps = nlohmann::json::array();
    for (std::size_t t = 0; t < s[1]; ++t) {
      const auto c = p.cell(v * s[1] + t);
      nlohmann::json st;
      st["step"] = t + 1;
      st["w"] = std::vector<double>(c.w.begin(), c.w.end());
      st["mu"] = std::vector<double>(c.mu.begin(), c.mu.end());
      st["sigma"] = std::vector<double>(c.sigma.begin(), c.sigma.end());
      st["mean"] = double(mixture_mean(c));
      std::vector<double> qs;
      for (double q : export_quantiles()) qs.push_back(double(quantile(T(q), c)));
      st["quantiles"] = qs;
      steps.push_back(st);
    }
    vars.push_back({{"variable", v < names.size() ? names[v] : std::to_string(v)}, {"steps", steps}});
  }
  j["variables"] = vars;
  return j;
}

inline void forecast_csv_header(std::ostream& os) {
  os << "origin,variable,step,k,w,mu,sigma";
  for (double q : export_quantiles()) os << ",q" << q;
  os << '\n';
}

/// One row per (variable, step, k); quantile columns repeat per step.
template <class T>
void forecast_csv_rows(std::ostream& os, const GmmParams<T>& p, std::size_t origin,
                       const std::vector<std::string>& names) {
  const Shape& s = p.w.shape();
  if (s.size() != 3) throw DimensionError("forecast export expects [V, L_f, K]");
  os << std::setprecision(17);
  for (std::size_t v = 0; v < s[0]; ++v)
    for (std::size_t t = 0; t < s[1]; ++t) {
      const auto c = p.cell(v * s[1] + t);
      std::vector<double> qs;
      for (double q : export_quantiles()) qs.push_back(double(quantile(T(q), c)));
      for (std::size_t k = 0; k < s[2]; ++k) {
        os << origin << ',' << (v < names.size() ? names[v] : std::to_string(v)) << ',' << t + 1 << ',' << k << ','
           << double(c.w[k]) << ',' << double(c.mu[k]) << ',' << double(c.sigma[k]);
        for (double q : qs) os << ',' << q;
        os << '\n';
      }
    }
}

}  // namespace timegmm
