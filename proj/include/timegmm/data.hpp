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
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "timegmm/error.hpp"
#include "timegmm/log.hpp"
#include "timegmm/tensor.hpp"

namespace timegmm {

enum class TimestampKind { index, datetime };

/// V-variable, N-step series. `values` is [V, N]; timestamps are seconds
/// since the Unix epoch for datetimes, or the raw integer for index columns.
struct SeriesFrame {
  std::vector<std::string> names;
  std::vector<double> timestamps;
  TimestampKind timestamp_kind = TimestampKind::index;
  std::string frequency;
  Tensor<double> values;

  std::size_t variables() const { return values.extent(0); }
  std::size_t timesteps() const { return values.extent(1); }
  double at(std::size_t v, std::size_t t) const { return values.at(v, t); }

  friend bool operator==(const SeriesFrame&, const SeriesFrame&) = default;
};

struct CsvSchema {
  /// Overrides the inferred frequency tag when set.
  std::optional<std::string> frequency;
};

namespace detail {

inline std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  s = trim(s);
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

/// ISO-8601 "YYYY-MM-DD[(T| )HH:MM[:SS[.fff]]][Z]" to Unix seconds (UTC).
inline std::optional<double> parse_iso8601(std::string_view s) {
  s = trim(s);
  auto num = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
    if (pos + len > s.size()) return std::nullopt;
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (s[i] < '0' || s[i] > '9') return std::nullopt;
      v = v * 10 + (s[i] - '0');
    }
    return v;
  };
  auto y = num(0, 4), mo = num(5, 2), d = num(8, 2);
  if (!y || !mo || !d || s.size() < 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  if (*mo < 1 || *mo > 12 || *d < 1 || *d > 31) return std::nullopt;
  double secs = static_cast<double>(days_from_civil(*y, static_cast<unsigned>(*mo), static_cast<unsigned>(*d))) * 86400.0;
  std::size_t pos = 10;
  if (pos == s.size()) return secs;
  if (s[pos] != 'T' && s[pos] != ' ') return std::nullopt;
  auto h = num(pos + 1, 2), mi = num(pos + 4, 2);
  if (!h || !mi || s[pos + 3] != ':' || *h > 23 || *mi > 59) return std::nullopt;
  secs += *h * 3600.0 + *mi * 60.0;
  pos += 6;
  if (pos < s.size() && s[pos] == ':') {
    auto sec = num(pos + 1, 2);
    if (!sec || *sec > 60) return std::nullopt;
    secs += *sec;
    pos += 3;
    if (pos < s.size() && s[pos] == '.') {
      std::size_t start = ++pos;
      double scale = 0.1, frac = 0;
      while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
        frac += (s[pos] - '0') * scale;
        scale /= 10;
        ++pos;
      }
      if (pos == start) return std::nullopt;
      secs += frac;
    }
  }
  if (pos < s.size() && s[pos] == 'Z') ++pos;
  if (pos != s.size()) return std::nullopt;
  return secs;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    else if (line[i] == ',' && !quoted) {
      cells.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  cells.push_back(line.substr(start));
  return cells;
}

inline std::string infer_frequency(const std::vector<double>& ts, TimestampKind kind) {
  if (kind == TimestampKind::index || ts.size() < 2) return "index";
  std::vector<double> deltas(ts.size() - 1);
  for (std::size_t i = 1; i < ts.size(); ++i) deltas[i - 1] = ts[i] - ts[i - 1];
  std::nth_element(deltas.begin(), deltas.begin() + deltas.size() / 2, deltas.end());
  const auto step = static_cast<std::int64_t>(std::llround(deltas[deltas.size() / 2]));
  if (step > 0 && step % 86400 == 0) return std::to_string(step / 86400) + "d";
  if (step > 0 && step % 3600 == 0) return std::to_string(step / 3600) + "h";
  if (step > 0 && step % 60 == 0) return std::to_string(step / 60) + "min";
  return std::to_string(step) + "s";
}

}  // namespace detail

/// Parses a header-first CSV: column 0 is the timestamp (ISO-8601 or integer
/// index), the rest are numeric variables. Rows with missing or unparseable
/// cells are rejected; timestamps must be strictly increasing.
inline SeriesFrame parse_csv(std::istream& in, const CsvSchema& schema = {},
                             const std::string& source = "<csv>") {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty file");
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  auto header = detail::split_csv_line(line);
  if (header.size() < 2) throw DataError(source + ": need a timestamp column and at least one variable");
  SeriesFrame frame;
  for (std::size_t c = 1; c < header.size(); ++c) frame.names.emplace_back(detail::trim(header[c]));
  const std::size_t vars = frame.names.size();

  std::vector<std::vector<double>> cols(vars);
  std::optional<TimestampKind> kind;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError(source + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                      " cells, expected " + std::to_string(header.size()));
    double ts = 0;
    if (auto idx = detail::parse_int(cells[0]); idx && kind != TimestampKind::datetime) {
      kind = TimestampKind::index;
      ts = static_cast<double>(*idx);
    } else if (auto dt = detail::parse_iso8601(cells[0]); dt && kind != TimestampKind::index) {
      kind = TimestampKind::datetime;
      ts = *dt;
    } else {
      throw DataError(source + ": row " + std::to_string(row) + ", column 1: unparseable timestamp '" +
                      std::string(detail::trim(cells[0])) + "'");
    }
    if (!frame.timestamps.empty() && ts <= frame.timestamps.back())
      throw DataError(source + ": row " + std::to_string(row) + ": timestamps are not strictly increasing");
    frame.timestamps.push_back(ts);
    for (std::size_t c = 0; c < vars; ++c) {
      auto v = detail::parse_double(cells[c + 1]);
      if (!v)
        throw DataError(source + ": row " + std::to_string(row) + ", column " + std::to_string(c + 2) + " ('" +
                        frame.names[c] + "'): " +
                        (detail::trim(cells[c + 1]).empty() ? std::string("missing value")
                                                            : "unparseable value '" +
                                                                  std::string(detail::trim(cells[c + 1])) + "'"));
      cols[c].push_back(*v);
    }
  }
  const std::size_t n = frame.timestamps.size();
  if (n == 0) throw DataError(source + ": no data rows");
  frame.timestamp_kind = kind.value_or(TimestampKind::index);
  frame.frequency = schema.frequency.value_or(detail::infer_frequency(frame.timestamps, frame.timestamp_kind));
  frame.values = Tensor<double>({vars, n});
  for (std::size_t c = 0; c < vars; ++c)
    std::copy(cols[c].begin(), cols[c].end(), frame.values.data() + c * n);
  return frame;
}

inline SeriesFrame load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return parse_csv(in, schema, path);
}

inline void write_csv(const SeriesFrame& frame, std::ostream& out) {
  out << (frame.timestamp_kind == TimestampKind::index ? "index" : "date");
  for (const auto& n : frame.names) out << ',' << n;
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t t = 0; t < frame.timesteps(); ++t) {
    if (frame.timestamp_kind == TimestampKind::index) {
      out << static_cast<std::int64_t>(frame.timestamps[t]);
    } else {
      auto secs = static_cast<std::int64_t>(std::floor(frame.timestamps[t]));
      std::int64_t days = secs >= 0 ? secs / 86400 : (secs - 86399) / 86400;
      std::int64_t rem = secs - days * 86400;
      // civil_from_days
      std::int64_t z = days + 719468;
      std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
      auto doe = static_cast<unsigned>(z - era * 146097);
      unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
      std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
      unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
      unsigned mp = (5 * doy + 2) / 153;
      unsigned d = doy - (153 * mp + 2) / 5 + 1;
      unsigned m = mp < 10 ? mp + 3 : mp - 9;
      y += m <= 2;
      char buf[64];
      std::snprintf(buf, sizeof buf, "%04lld-%02u-%02u %02lld:%02lld:%02lld", static_cast<long long>(y), m, d,
                    static_cast<long long>(rem / 3600), static_cast<long long>(rem % 3600 / 60),
                    static_cast<long long>(rem % 60));
      out << buf;
    }
    for (std::size_t v = 0; v < frame.variables(); ++v) out << ',' << frame.at(v, t);
    out << '\n';
  }
}

inline void write_csv(const SeriesFrame& frame, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_csv(frame, out);
}

// ---------------------------------------------------------------------------
// Splits and windows.

/// Half-open timestep range [begin, end).
struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t span() const { return end - begin; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct SplitSpec {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
  /// Training-window stride.
  std::size_t stride = 1;
  /// Validation/test stride; 0 means the horizon (non-overlapping windows).
  std::size_t eval_stride = 0;
};

struct SplitSegments {
  Segment train, val, test;
};

/// Chronological train/val/test segments: train = floor(N*train),
/// test = floor(N*test), val takes the remainder between them.
inline SplitSegments split_segments(std::size_t timesteps, const SplitSpec& spec) {
  if (spec.train <= 0 || spec.val < 0 || spec.test < 0 || spec.train + spec.val + spec.test > 1.0 + 1e-12)
    throw ConfigError("split fractions must be non-negative, train > 0, and sum to at most 1");
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(timesteps) * spec.train));
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(timesteps) * spec.test));
  const double used = spec.train + spec.val + spec.test;
  const std::size_t total =
      used >= 1.0 - 1e-12 ? timesteps : static_cast<std::size_t>(std::floor(static_cast<double>(timesteps) * used));
  SplitSegments s;
  s.train = {0, n_train};
  s.test = {total - n_test, total};
  s.val = {n_train, total - n_test};
  return s;
}

/// Origins (index of the first forecast step) of every window lying fully in
/// `seg`: history [o - L_h, o), future [o, o + L_f).
inline std::vector<std::size_t> window_origins(const Segment& seg, std::size_t history, std::size_t horizon,
                                               std::size_t stride) {
  if (history == 0 || horizon == 0) throw ConfigError("window lengths must be >= 1");
  if (stride == 0) throw ConfigError("window stride must be >= 1");
  std::vector<std::size_t> out;
  if (seg.span() < history + horizon) {
    Log::warn("segment [" + std::to_string(seg.begin) + ", " + std::to_string(seg.end) +
              ") is shorter than history + horizon = " + std::to_string(history + horizon) + "; no windows");
    return out;
  }
  for (std::size_t o = seg.begin + history; o + horizon <= seg.end; o += stride) out.push_back(o);
  return out;
}

struct WindowPair {
  Tensor<double> history;  // [V, L_h]
  Tensor<double> future;   // [V, L_f]
  std::size_t origin = 0;
};

inline WindowPair extract_window(const SeriesFrame& frame, std::size_t origin, std::size_t history,
                                 std::size_t horizon) {
  if (origin < history || origin + horizon > frame.timesteps())
    throw DataError("window at origin " + std::to_string(origin) + " exceeds the series");
  const std::size_t vars = frame.variables();
  WindowPair w{Tensor<double>({vars, history}), Tensor<double>({vars, horizon}), origin};
  for (std::size_t v = 0; v < vars; ++v) {
    for (std::size_t t = 0; t < history; ++t) w.history.at(v, t) = frame.at(v, origin - history + t);
    for (std::size_t t = 0; t < horizon; ++t) w.future.at(v, t) = frame.at(v, origin + t);
  }
  return w;
}

/// Sliding windows over one segment with `stride`.
inline std::vector<WindowPair> make_windows(const SeriesFrame& frame, std::size_t history, std::size_t horizon,
                                            const Segment& seg, std::size_t stride = 1) {
  if (seg.end > frame.timesteps()) throw DataError("segment exceeds the series length");
  std::vector<WindowPair> out;
  for (auto o : window_origins(seg, history, horizon, stride)) out.push_back(extract_window(frame, o, history, horizon));
  return out;
}

struct SplitWindows {
  std::vector<WindowPair> train, val, test;
};

/// Windows for all three splits; no window crosses a split boundary.
inline SplitWindows make_windows(const SeriesFrame& frame, std::size_t history, std::size_t horizon,
                                 const SplitSpec& split) {
  auto segs = split_segments(frame.timesteps(), split);
  const std::size_t eval = split.eval_stride ? split.eval_stride : horizon;
  return {make_windows(frame, history, horizon, segs.train, split.stride),
          make_windows(frame, history, horizon, segs.val, eval),
          make_windows(frame, history, horizon, segs.test, eval)};
}

}  // namespace timegmm
