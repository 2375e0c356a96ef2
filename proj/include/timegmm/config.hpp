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

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "timegmm/data.hpp"
#include "timegmm/gmm.hpp"
#include "timegmm/model_config.hpp"
#include "timegmm/optim.hpp"
#include "timegmm/rng.hpp"
#include "timegmm/synthetic.hpp"

namespace timegmm {

struct DataConfig {
  /// "csv" reads `path`; "synthetic" generates from [synthetic].
  std::string source = "synthetic";
  std::string path;
  /// Report label; defaults to the file stem or the generator kind.
  std::string name;
  /// Overrides the inferred frequency tag.
  std::string frequency;
  SplitSpec split;
};

struct TrainConfig {
  AdamWConfig adam;
  LossWeights loss;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  /// Wall-clock budget; 0 disables. Hitting it ends training after the
  /// current epoch, so runs that hit it are not bitwise reproducible.
  double max_seconds = 0;
  /// Caps on windows per split (evenly spaced subsample); 0 keeps all.
  std::size_t max_train_windows = 0;
  std::size_t max_eval_windows = 0;
  bool no_gmm = false;
  bool no_grin = false;

  void validate() const {
    if (!(adam.lr > 0)) throw ConfigError("training.lr must be > 0");
    if (adam.weight_decay < 0) throw ConfigError("training.weight_decay must be >= 0");
    if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1))
      throw ConfigError("training.beta1/beta2 must lie in [0, 1)");
    if (!(adam.eps > 0)) throw ConfigError("training.eps must be > 0");
    if (patience < 1) throw ConfigError("training.patience must be >= 1");
    if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
    if (loss.nll < 0 || loss.mean < 0 || loss.weight < 0) throw ConfigError("loss weights must be >= 0");
    if (clip_norm < 0) throw ConfigError("training.clip_norm must be >= 0");
  }
};

struct RunConfig {
  DataConfig data;
  SyntheticSpec synthetic;
  ModelConfig model;
  TrainConfig training;
  std::string output_dir = "runs/default";
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> horizons;

  /// Model configuration after ablation flags and the dataset's variable count.
  ModelConfig effective_model(std::size_t variables) const {
    ModelConfig m = model;
    if (m.dims.variables == 0) m.dims.variables = variables;
    if (m.dims.variables != variables)
      throw ConfigError("model.variables = " + std::to_string(m.dims.variables) + " but the dataset has " +
                        std::to_string(variables));
    if (training.no_gmm) m.dims.components = 1;
    if (training.no_grin) m.use_grin = false;
    m.validate();
    return m;
  }
};

inline RunConfig default_run_config() {
  RunConfig c;
  c.model.dims.variables = 0;
  return c;
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

template <class U>
std::string fmt_list(const std::vector<U>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    if constexpr (std::is_floating_point_v<U>)
      s += fmt_double(v[i]);
    else
      s += std::to_string(v[i]);
  }
  return s + "]";
}

/// Whitespace-only trim; quotes are significant in config values.
inline std::string_view trim_space(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

struct ConfigValue {
  std::string text;  // raw right-hand side, trimmed
  std::string where;
  /// Command-line overrides may omit the quotes around strings.
  bool bare_strings = false;

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError(where + ": expected " + what + ", got '" + text + "'");
  }
  std::string as_string() const {
    if (text.size() >= 2 && text.front() == '"' && text.back() == '"') {
      std::string out;
      for (std::size_t i = 1; i + 1 < text.size(); ++i) {
        if (text[i] == '\\' && i + 2 < text.size()) ++i;
        out += text[i];
      }
      return out;
    }
    if (bare_strings && text.find('"') == std::string::npos) return text;
    fail("a quoted string");
  }
  double as_double() const {
    if (!text.empty() && text.front() != '"')
      if (auto v = parse_double(text)) return *v;
    fail("a finite number");
  }
  std::uint64_t as_u64() const {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size()) fail("a non-negative integer");
    return v;
  }
  std::size_t as_size() const { return static_cast<std::size_t>(as_u64()); }
  bool as_bool() const {
    if (text == "true") return true;
    if (text == "false") return false;
    fail("true or false");
  }
  std::vector<std::string> items() const {
    if (text.size() < 2 || text.front() != '[' || text.back() != ']') fail("a [list]");
    std::vector<std::string> out;
    std::string inner = text.substr(1, text.size() - 2);
    std::stringstream ss(inner);
    std::string item;
    while (std::getline(ss, item, ',')) {
      auto t = std::string(trim_space(item));
      if (!t.empty()) out.push_back(t);
    }
    return out;
  }
  std::vector<double> as_double_list() const {
    std::vector<double> out;
    for (auto& i : items()) out.push_back(ConfigValue{i, where}.as_double());
    return out;
  }
  template <class U>
  std::vector<U> as_int_list() const {
    std::vector<U> out;
    for (auto& i : items()) out.push_back(static_cast<U>(ConfigValue{i, where}.as_u64()));
    return out;
  }
};

/// Schedule written as "start:level:scale, start:level:scale".
inline std::vector<RegimeSegment> parse_schedule(const std::string& s, const std::string& where) {
  std::vector<RegimeSegment> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    auto t = std::string(trim_space(part));
    if (t.empty()) continue;
    auto a = t.find(':'), b = t.find(':', a == std::string::npos ? a : a + 1);
    if (a == std::string::npos || b == std::string::npos)
      throw ConfigError(where + ": schedule entries must be start:level:scale, got '" + t + "'");
    RegimeSegment r;
    r.start = ConfigValue{t.substr(0, a), where}.as_size();
    r.level = ConfigValue{t.substr(a + 1, b - a - 1), where}.as_double();
    r.scale = ConfigValue{t.substr(b + 1), where}.as_double();
    out.push_back(r);
  }
  return out;
}

inline std::string fmt_schedule(const std::vector<RegimeSegment>& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i].start) + ":" + fmt_double(s[i].level) + ":" + fmt_double(s[i].scale);
  }
  return quote(out);
}

struct ConfigField {
  std::string section, key;
  std::function<void(RunConfig&, const ConfigValue&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigField>& config_fields() {
  using V = const ConfigValue&;
  using C = const RunConfig&;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto num = [&](std::string sec, std::string key, auto member) {
      f.push_back({sec, key, [member](RunConfig& c, V v) { member(c) = v.as_double(); },
                   [member](C c) { return fmt_double(member(c)); }});
    };
    auto size = [&](std::string sec, std::string key, auto member) {
      f.push_back({sec, key, [member](RunConfig& c, V v) { member(c) = v.as_size(); },
                   [member](C c) { return std::to_string(member(c)); }});
    };
    auto flag = [&](std::string sec, std::string key, auto member) {
      f.push_back({sec, key, [member](RunConfig& c, V v) { member(c) = v.as_bool(); },
                   [member](C c) { return std::string(member(c) ? "true" : "false"); }});
    };
    auto str = [&](std::string sec, std::string key, auto member) {
      f.push_back({sec, key, [member](RunConfig& c, V v) { member(c) = v.as_string(); },
                   [member](C c) { return quote(member(c)); }});
    };
    auto dlist = [&](std::string sec, std::string key, auto member) {
      f.push_back({sec, key, [member](RunConfig& c, V v) { member(c) = v.as_double_list(); },
                   [member](C c) { return fmt_list(member(c)); }});
    };
#define TG_M(expr) [](auto& c) -> auto& { return expr; }
    str("data", "source", TG_M(c.data.source));
    str("data", "path", TG_M(c.data.path));
    str("data", "name", TG_M(c.data.name));
    str("data", "frequency", TG_M(c.data.frequency));
    num("data", "train_fraction", TG_M(c.data.split.train));
    num("data", "val_fraction", TG_M(c.data.split.val));
    num("data", "test_fraction", TG_M(c.data.split.test));
    size("data", "train_stride", TG_M(c.data.split.stride));
    size("data", "eval_stride", TG_M(c.data.split.eval_stride));

    f.push_back({"synthetic", "kind",
                 [](RunConfig& c, V v) { c.synthetic.kind = parse_synthetic_kind(v.as_string()); },
                 [](C c) { return quote(to_string(c.synthetic.kind)); }});
    size("synthetic", "variables", TG_M(c.synthetic.variables));
    size("synthetic", "length", TG_M(c.synthetic.length));
    f.push_back({"synthetic", "seed", [](RunConfig& c, V v) { c.synthetic.seed = v.as_u64(); },
                 [](C c) { return std::to_string(c.synthetic.seed); }});
    num("synthetic", "ar", TG_M(c.synthetic.ar));
    dlist("synthetic", "noise_locs", TG_M(c.synthetic.noise_locs));
    dlist("synthetic", "noise_scales", TG_M(c.synthetic.noise_scales));
    dlist("synthetic", "noise_weights", TG_M(c.synthetic.noise_weights));
    dlist("synthetic", "periods", TG_M(c.synthetic.periods));
    dlist("synthetic", "amplitudes", TG_M(c.synthetic.amplitudes));
    f.push_back({"synthetic", "schedule",
                 [](RunConfig& c, V v) { c.synthetic.schedule = parse_schedule(v.as_string(), v.where); },
                 [](C c) { return fmt_schedule(c.synthetic.schedule); }});

    size("model", "variables", TG_M(c.model.dims.variables));
    size("model", "history", TG_M(c.model.dims.history));
    size("model", "horizon", TG_M(c.model.dims.horizon));
    size("model", "d_model", TG_M(c.model.dims.d_model));
    size("model", "patch_len", TG_M(c.model.dims.patch_len));
    size("model", "patch_stride", TG_M(c.model.dims.patch_stride));
    size("model", "steps_per_token", TG_M(c.model.dims.steps_per_token));
    size("model", "encoder_layers", TG_M(c.model.dims.encoder_layers));
    size("model", "decoder_layers", TG_M(c.model.dims.decoder_layers));
    size("model", "components", TG_M(c.model.dims.components));
    size("model", "heads", TG_M(c.model.dims.heads));
    size("model", "ffn_mult", TG_M(c.model.dims.ffn_mult));
    num("model", "init_std", TG_M(c.model.init_std));

    num("grin", "eps", TG_M(c.model.grin_eps));
    num("grin", "scale_floor", TG_M(c.model.grin_scale_floor));
    size("grin", "decomp_kernel", TG_M(c.model.decomp_kernel));

    flag("decoder", "residual", TG_M(c.model.decoder_residual));
    num("decoder", "sigma_min", TG_M(c.model.sigma_min));

    num("loss", "lambda_nll", TG_M(c.training.loss.nll));
    num("loss", "lambda_mean", TG_M(c.training.loss.mean));
    num("loss", "lambda_weight", TG_M(c.training.loss.weight));

    num("training", "lr", TG_M(c.training.adam.lr));
    num("training", "weight_decay", TG_M(c.training.adam.weight_decay));
    num("training", "beta1", TG_M(c.training.adam.beta1));
    num("training", "beta2", TG_M(c.training.adam.beta2));
    num("training", "eps", TG_M(c.training.adam.eps));
    size("training", "batch_size", TG_M(c.training.batch_size));
    size("training", "max_epochs", TG_M(c.training.max_epochs));
    size("training", "patience", TG_M(c.training.patience));
    num("training", "clip_norm", TG_M(c.training.clip_norm));
    f.push_back({"training", "seed", [](RunConfig& c, V v) { c.training.seed = v.as_u64(); },
                 [](C c) { return std::to_string(c.training.seed); }});
    num("training", "max_seconds", TG_M(c.training.max_seconds));
    size("training", "max_train_windows", TG_M(c.training.max_train_windows));
    size("training", "max_eval_windows", TG_M(c.training.max_eval_windows));
    flag("training", "no_gmm", TG_M(c.training.no_gmm));
    flag("training", "no_grin", TG_M(c.training.no_grin));

    str("run", "output_dir", TG_M(c.output_dir));
    f.push_back({"run", "seeds", [](RunConfig& c, V v) { c.seeds = v.as_int_list<std::uint64_t>(); },
                 [](C c) { return fmt_list(c.seeds); }});
    f.push_back({"run", "horizons", [](RunConfig& c, V v) { c.horizons = v.as_int_list<std::size_t>(); },
                 [](C c) { return fmt_list(c.horizons); }});
#undef TG_M
    return f;
  }();
  return fields;
}

inline const ConfigField& find_field(const std::string& section, const std::string& key, const std::string& where) {
  for (const auto& f : config_fields())
    if (f.section == section && f.key == key) return f;
  bool known_section = false;
  for (const auto& f : config_fields()) known_section = known_section || f.section == section;
  if (!known_section) throw ConfigError(where + ": unknown section [" + section + "]");
  throw ConfigError(where + ": unknown key '" + key + "' in section [" + section + "]");
}

/// Strips a trailing # comment that is not inside a quoted string.
inline std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

}  // namespace detail

/// Applies `section.key = value` text (the config file grammar) on top of `cfg`.
inline void apply_config_text(RunConfig& cfg, std::istream& in, const std::string& source) {
  std::string line, section;
  std::map<std::string, int> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    auto t = std::string(detail::trim_space(detail::strip_comment(line)));
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + ": malformed section header");
      section = std::string(detail::trim_space(t.substr(1, t.size() - 2)));
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    if (section.empty()) throw ConfigError(where + ": key outside of any [section]");
    auto key = std::string(detail::trim_space(t.substr(0, eq)));
    auto value = std::string(detail::trim_space(t.substr(eq + 1)));
    const auto& f = detail::find_field(section, key, where);
    if (seen.count(section + "." + key))
      throw ConfigError(where + ": duplicate key '" + key + "' (first set on line " +
                        std::to_string(seen[section + "." + key]) + ")");
    seen[section + "." + key] = lineno;
    f.set(cfg, detail::ConfigValue{value, where + " (" + section + "." + key + ")"});
  }
}

inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source = "<config>") {
  std::istringstream in(text);
  apply_config_text(cfg, in, source);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  RunConfig c = default_run_config();
  apply_config_text(c, in, path);
  return c;
}

/// `section.key=value` override, as given to --set.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override must look like section.key=value, got '" + assignment + "'");
  const auto section = std::string(detail::trim_space(assignment.substr(0, dot)));
  const auto key = std::string(detail::trim_space(assignment.substr(dot + 1, eq - dot - 1)));
  const auto& f = detail::find_field(section, key, "--set " + assignment);
  f.set(cfg,
        detail::ConfigValue{std::string(detail::trim_space(assignment.substr(eq + 1))), "--set " + assignment, true});
}

/// Canonical text of every field, grouped by section in a fixed order. When
/// `include_run` is false the [run] section is omitted (used for the hash).
inline std::string canonical_config(const RunConfig& cfg, bool include_run = true) {
  std::string out, section;
  for (const auto& f : detail::config_fields()) {
    if (!include_run && f.section == "run") continue;
    if (f.section != section) {
      if (!section.empty()) out += '\n';
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(cfg) + '\n';
  }
  return out;
}

/// Identity of the experiment: everything except output location and sweeps.
inline std::uint64_t config_hash(const RunConfig& cfg) { return Rng::fnv1a(canonical_config(cfg, false)); }

}  // namespace timegmm
