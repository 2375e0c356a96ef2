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
#include <array>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "timegmm/gmm.hpp"

namespace timegmm {

/// Aggregate scores for one (dataset, horizon). CRPS is the closed-form
/// mixture CRPS divided by the mean |y| of the evaluated targets; per-variable
/// CRPS uses the same global denominator so the aggregate is their mean.
struct MetricReport {
  std::string dataset;
  std::size_t horizon = 0;
  std::vector<std::string> variables;
  std::vector<double> crps_per_variable;
  double crps = 0;
  double nmae = 0;
  /// false when every target is zero; nmae is then meaningless and
  /// serialized as null.
  bool nmae_defined = true;
  /// mean |y|; CRPS is unnormalized when this is zero.
  double scale = 0;
  bool crps_normalized = true;
  std::size_t windows = 0;
  std::vector<std::uint64_t> seeds;
  std::uint64_t config_hash = 0;
  /// Spread over seeds, populated by multi-seed runs.
  std::optional<double> crps_std, nmae_std;
  /// Optional extras (validation NLL, weight-sum deviation) keyed by name.
  std::vector<std::pair<std::string, double>> extras;
};

/// Per-window partial sums; reduction happens in origin order so the result
/// does not depend on the order windows were scored.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::size_t variables) : vars_(variables) {}

  /// `p` is [V, L_f, K] with normalized weights, `y` is [V, L_f].
  template <class T>
  void add(std::size_t origin, const GmmParams<T>& p, const Tensor<T>& y) {
    const Shape& s = p.w.shape();
    if (s.size() != 3 || s[0] != vars_ || y.shape() != Shape{s[0], s[1]})
      throw DimensionError("metric input shapes do not match: params " + shape_str(s) + ", targets " +
                           shape_str(y.shape()));
    if (!p.normalized) throw NumericalError("CRPS needs normalized mixture weights");
    Window w{origin, s[1], std::vector<double>(vars_), std::vector<double>(vars_), std::vector<double>(vars_)};
    for (std::size_t v = 0; v < vars_; ++v)
      for (std::size_t t = 0; t < s[1]; ++t) {
        const auto c = p.cell(v * s[1] + t);
        const T target = y.at(v, t);
        w.crps[v] += double(crps_closed_form(target, c));
        w.abs_err[v] += std::abs(double(mixture_mean(c)) - double(target));
        w.abs_y[v] += std::abs(double(target));
      }
    for (double x : w.crps)
      if (!std::isfinite(x)) throw NumericalError("non-finite CRPS at window origin " + std::to_string(origin));
    windows_.push_back(std::move(w));
  }

  void merge(MetricAccumulator&& other) {
    for (auto& w : other.windows_) windows_.push_back(std::move(w));
  }

  std::size_t size() const { return windows_.size(); }

  MetricReport finish(std::vector<std::string> names = {}) const {
    if (windows_.empty()) throw DataError("no evaluation windows");
    auto order = windows_;
    std::stable_sort(order.begin(), order.end(), [](const Window& a, const Window& b) { return a.origin < b.origin; });
    MetricReport r;
    r.horizon = order.front().steps;
    r.windows = order.size();
    r.variables = std::move(names);
    if (r.variables.size() != vars_) {
      r.variables.clear();
      for (std::size_t v = 0; v < vars_; ++v) r.variables.push_back(std::to_string(v));
    }
    std::vector<double> crps(vars_, 0.0), err(vars_, 0.0), ay(vars_, 0.0);
    double cells = 0;
    for (const auto& w : order) {
      for (std::size_t v = 0; v < vars_; ++v) {
        crps[v] += w.crps[v];
        err[v] += w.abs_err[v];
        ay[v] += w.abs_y[v];
      }
      cells += double(w.steps);
    }
    const double total_y = std::accumulate(ay.begin(), ay.end(), 0.0);
    const double total_err = std::accumulate(err.begin(), err.end(), 0.0);
    r.scale = total_y / (cells * double(vars_));
    r.crps_normalized = r.scale > 0;
    const double denom = r.crps_normalized ? r.scale : 1.0;
    r.crps = 0;
    for (std::size_t v = 0; v < vars_; ++v) {
      r.crps_per_variable.push_back(crps[v] / cells / denom);
      r.crps += r.crps_per_variable.back();
    }
    r.crps /= double(vars_);
    r.nmae_defined = total_y > 0;
    r.nmae = r.nmae_defined ? total_err / total_y : 0.0;
    return r;
  }

 private:
  struct Window {
    std::size_t origin;
    std::size_t steps;
    std::vector<double> crps, abs_err, abs_y;
  };
  std::size_t vars_;
  std::vector<Window> windows_;
};

/// Closed-form CRPS of each (window, variable, step) cell, normalized by the
/// segment mean |y|; scores shaped [W, V, L_f].
template <class T>
Tensor<double> crps_eval(const std::vector<GmmParams<T>>& forecasts, const std::vector<Tensor<T>>& targets,
                         bool* normalized = nullptr) {
  if (forecasts.size() != targets.size() || forecasts.empty())
    throw DimensionError("crps_eval needs one target per forecast");
  const Shape s = targets.front().shape();
  Tensor<double> out({forecasts.size(), s[0], s[1]});
  double abs_sum = 0;
  for (std::size_t w = 0; w < forecasts.size(); ++w) {
    if (!forecasts[w].normalized) throw NumericalError("CRPS needs normalized mixture weights");
    for (std::size_t i = 0; i < s[0] * s[1]; ++i) {
      out[w * s[0] * s[1] + i] = double(crps_closed_form(targets[w][i], forecasts[w].cell(i)));
      abs_sum += std::abs(double(targets[w][i]));
    }
  }
  const double scale = abs_sum / double(out.size());
  if (normalized) *normalized = scale > 0;
  if (scale > 0)
    for (auto& v : out.values()) v /= scale;
  return out;
}

template <class T>
double nmae(const Tensor<T>& point, const Tensor<T>& targets) {
  if (point.shape() != targets.shape())
    throw DimensionError("nmae shapes differ: " + shape_str(point.shape()) + " vs " + shape_str(targets.shape()));
  double num = 0, den = 0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    num += std::abs(double(point[i]) - double(targets[i]));
    den += std::abs(double(targets[i]));
  }
  if (!(den > 0)) throw DataError("NMAE undefined: sum of |y| is zero");
  return num / den;
}

// ---------------------------------------------------------------------------
// Report serialization.

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j{{"dataset", r.dataset},
                   {"horizon", r.horizon},
                   {"crps", r.crps},
                   {"nmae", r.nmae_defined ? nlohmann::json(r.nmae) : nlohmann::json(nullptr)},
                   {"crps_normalized", r.crps_normalized},
                   {"target_scale", r.scale},
                   {"windows", r.windows},
                   {"seeds", r.seeds},
                   {"config_hash", r.config_hash}};
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t v = 0; v < r.crps_per_variable.size(); ++v) per[r.variables.at(v)] = r.crps_per_variable[v];
  j["crps_per_variable"] = per;
  if (r.crps_std) j["crps_std"] = *r.crps_std;
  if (r.nmae_std) j["nmae_std"] = *r.nmae_std;
  for (const auto& [k, v] : r.extras) j["extras"][k] = v;
  return j;
}

namespace detail {
inline std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}
inline std::string with_spread(double v, const std::optional<double>& s) {
  return s ? fmt(v) + " +- " + fmt(*s) : fmt(v);
}
}  // namespace detail

/// Aligned table: one row per (dataset, horizon), CRPS then NMAE.
inline void write_text(std::ostream& os, const std::vector<MetricReport>& rows) {
  std::vector<std::array<std::string, 5>> cells;
  cells.push_back({"dataset", "horizon", "CRPS", "NMAE", "windows"});
  for (const auto& r : rows)
    cells.push_back({r.dataset.empty() ? "-" : r.dataset, std::to_string(r.horizon),
                     detail::with_spread(r.crps, r.crps_std) + (r.crps_normalized ? "" : " (unnormalized)"),
                     r.nmae_defined ? detail::with_spread(r.nmae, r.nmae_std) : "n/a", std::to_string(r.windows)});
  std::array<std::size_t, 5> width{};
  for (const auto& row : cells)
    for (std::size_t c = 0; c < 5; ++c) width[c] = std::max(width[c], row[c].size());
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < 5; ++c) {
      if (c) os << "  ";
      if (c == 0)
        os << std::left << std::setw(int(width[c])) << row[c];
      else
        os << std::right << std::setw(int(width[c])) << row[c];
    }
    os << '\n';
  }
  os << std::left;
}

inline void write_csv(std::ostream& os, const std::vector<MetricReport>& rows) {
  os << "dataset,horizon,crps,crps_std,nmae,nmae_std,crps_normalized,windows,config_hash\n" << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.dataset << ',' << r.horizon << ',' << r.crps << ',';
    if (r.crps_std) os << *r.crps_std;
    os << ',' << r.nmae << ',';
    if (r.nmae_std) os << *r.nmae_std;
    os << ',' << (r.crps_normalized ? 1 : 0) << ',' << r.windows << ',' << r.config_hash << '\n';
  }
}

/// Mean and sample standard deviation over per-seed reports.
inline MetricReport combine_seeds(const std::vector<MetricReport>& runs) {
  if (runs.empty()) throw Error("combine_seeds needs at least one report");
  MetricReport out = runs.front();
  out.seeds.clear();
  auto stats = [&](auto get) {
    double m = 0;
    for (const auto& r : runs) m += get(r);
    m /= double(runs.size());
    double s = 0;
    for (const auto& r : runs) s += (get(r) - m) * (get(r) - m);
    return std::pair{m, runs.size() > 1 ? std::sqrt(s / double(runs.size() - 1)) : 0.0};
  };
  std::tie(out.crps, out.crps_std) = stats([](const MetricReport& r) { return r.crps; });
  std::tie(out.nmae, out.nmae_std) = stats([](const MetricReport& r) { return r.nmae; });
  for (std::size_t v = 0; v < out.crps_per_variable.size(); ++v)
    out.crps_per_variable[v] = stats([v](const MetricReport& r) { return r.crps_per_variable.at(v); }).first;
  for (const auto& r : runs) out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
  for (auto& [k, val] : out.extras) {
    const std::string key = k;
    val = stats([&key](const MetricReport& r) {
            for (const auto& [kk, vv] : r.extras)
              if (kk == key) return vv;
            return 0.0;
          }).first;
  }
  return out;
}

}  // namespace timegmm
