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

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "timegmm/gradcheck_suite.hpp"
#include "timegmm/training.hpp"

namespace timegmm::cli {

#ifdef TIMEGMM_FLOAT32
using Real = float;
inline constexpr const char* kPrecision = "float32";
#else
using Real = double;
inline constexpr const char* kPrecision = "float64";
#endif

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

namespace fs = std::filesystem;

/// Flags shared by the configuration-driven subcommands.
struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string output;
  std::string seeds;
  std::string horizons;
  bool emit_csv = false;
  bool quiet = false;
};

namespace detail {

inline void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  os << content;
  if (!os) throw DataError("failed writing '" + path.string() + "'");
}

inline std::vector<std::uint64_t> parse_u64_list(const std::string& s, const std::string& flag) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = std::string(timegmm::detail::trim_space(item));
    if (t.empty()) continue;
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size()) throw ConfigError(flag + ": expected integers, got '" + s + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(flag + ": empty list");
  return out;
}

/// Precedence: built-in defaults < config file < --set (in order) < dedicated flags.
inline RunConfig resolve(const CommonOptions& o) {
  RunConfig cfg = o.config.empty() ? default_run_config() : load_run_config(o.config);
  for (const auto& s : o.sets) apply_override(cfg, s);
  if (!o.output.empty()) cfg.output_dir = o.output;
  if (!o.seeds.empty()) {
    auto v = parse_u64_list(o.seeds, "--seeds");
    if (v.size() == 1 && o.seeds.find(',') == std::string::npos) {
      // "--seeds N" runs N consecutive seeds starting at training.seed.
      if (v[0] == 0) throw ConfigError("--seeds: count must be >= 1");
      const auto n = v[0];
      v.clear();
      for (std::uint64_t i = 0; i < n; ++i) v.push_back(cfg.training.seed + i);
    }
    cfg.seeds = v;
  }
  if (!o.horizons.empty()) {
    cfg.horizons.clear();
    for (auto h : parse_u64_list(o.horizons, "--horizons")) cfg.horizons.push_back(std::size_t(h));
  }
  cfg.training.validate();
  return cfg;
}

inline std::vector<std::size_t> horizon_list(const RunConfig& cfg) {
  return cfg.horizons.empty() ? std::vector<std::size_t>{cfg.model.dims.horizon} : cfg.horizons;
}

class Manifest {
 public:
  Manifest(std::string command, const RunConfig& cfg) {
    j_["command"] = std::move(command);
    j_["precision"] = kPrecision;
    j_["config_hash"] = hex(config_hash(cfg));
    j_["resolved_config"] = "resolved_config.toml";
    j_["files"] = nlohmann::json::array();
  }
  void add(const fs::path& root, const fs::path& file, const std::string& kind) {
    j_["files"].push_back({{"path", fs::relative(file, root).generic_string()}, {"kind", kind}});
  }
  nlohmann::json& json() { return j_; }
  void write(const fs::path& dir) const { write_file(dir / "manifest.json", j_.dump(2) + "\n"); }

  static std::string hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

 private:
  nlohmann::json j_;
};

inline void write_reports(const fs::path& dir, const std::string& stem, const std::vector<MetricReport>& rows,
                          const nlohmann::json& extra, bool emit_csv, Manifest& m, const fs::path& root) {
  nlohmann::json j = extra;
  j["reports"] = nlohmann::json::array();
  for (const auto& r : rows) j["reports"].push_back(to_json(r));
  write_file(dir / (stem + ".json"), j.dump(2) + "\n");
  m.add(root, dir / (stem + ".json"), "report");
  std::ostringstream text;
  write_text(text, rows);
  write_file(dir / (stem + ".txt"), text.str());
  m.add(root, dir / (stem + ".txt"), "report");
  if (emit_csv) {
    std::ostringstream csv;
    write_csv(csv, rows);
    write_file(dir / (stem + ".csv"), csv.str());
    m.add(root, dir / (stem + ".csv"), "report");
  }
}

/// Streams log lines to a file (flushed per line) and optionally stdout.
class LineSink {
 public:
  LineSink(const fs::path& path, bool echo) : os_(path, std::ios::trunc), echo_(echo) {
    if (!os_) throw DataError("cannot write '" + path.string() + "'");
  }
  void operator()(const std::string& line) {
    os_ << line << '\n';
    os_.flush();
    if (echo_) std::cout << line << '\n' << std::flush;
  }

 private:
  std::ofstream os_;
  bool echo_;
};

struct TrainOutcome {
  SeedRun<Real> run;
  fs::path dir;
};

/// Trains one (horizon, seed) configuration into `dir`.
inline TrainOutcome train_one(const RunConfig& cfg, const Dataset& data, const fs::path& dir, const fs::path& root,
                              Manifest& m, bool quiet) {
  fs::create_directories(dir);
  write_file(dir / "resolved_config.toml", canonical_config(cfg));
  m.add(root, dir / "resolved_config.toml", "config");
  LineSink sink(dir / "train.log", !quiet);
  auto run = train_and_test<Real>(cfg, data, std::ref(sink));
  save_checkpoint(run.result.best, (dir / "best.ckpt").string());
  save_checkpoint(run.result.last, (dir / "last.ckpt").string());
  m.add(root, dir / "train.log", "log");
  m.add(root, dir / "best.ckpt", "checkpoint");
  m.add(root, dir / "last.ckpt", "checkpoint");
  return {std::move(run), dir};
}

inline nlohmann::json run_summary(const SeedRun<Real>& r) {
  return {{"seed", r.seed},
          {"best_epoch", r.result.best_epoch},
          {"best_val_crps", r.result.best_score},
          {"val_nll", r.val.nll},
          {"val_weight_deviation", r.val.weight_deviation},
          {"test_crps", r.test.crps},
          {"test_nmae", r.test.nmae_defined ? nlohmann::json(r.test.nmae) : nlohmann::json(nullptr)},
          {"stop_reason", r.result.stop_reason},
          {"diverged", r.result.diverged}};
}

inline std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      out += char(std::tolower(static_cast<unsigned char>(c)));
    else if (!out.empty() && out.back() != '-')
      out += '-';
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands.

inline int cmd_train(const CommonOptions& o) {
  RunConfig cfg = resolve(o);
  const fs::path root = cfg.output_dir;
  fs::create_directories(root);
  write_file(root / "resolved_config.toml", canonical_config(cfg));
  Manifest m("train", cfg);
  const Dataset data = load_dataset(cfg);
  const auto horizons = horizon_list(cfg);
  const auto seeds = seed_list(cfg);
  const bool nested = horizons.size() > 1 || seeds.size() > 1;
  std::vector<MetricReport> rows;
  nlohmann::json runs = nlohmann::json::array();
  bool diverged = false;
  for (std::size_t h : horizons) {
    std::vector<MetricReport> per_seed;
    for (std::uint64_t seed : seeds) {
      RunConfig c = cfg;
      c.model.dims.horizon = h;
      c.training.seed = seed;
      c.horizons.clear();
      c.seeds.clear();
      fs::path dir = root;
      if (nested) dir = root / ("h" + std::to_string(h)) / ("seed" + std::to_string(seed));
      if (!o.quiet && nested) std::cout << "== horizon " << h << " seed " << seed << '\n';
      auto out = train_one(c, data, dir, root, m, o.quiet);
      auto summary = run_summary(out.run);
      summary["horizon"] = h;
      summary["dir"] = fs::relative(dir, root).generic_string();
      runs.push_back(summary);
      diverged = diverged || out.run.result.diverged;
      if (nested) write_reports(dir, "report", {out.run.test}, summary, o.emit_csv, m, root);
      per_seed.push_back(out.run.test);
    }
    MetricReport r = combine_seeds(per_seed);
    r.horizon = h;
    rows.push_back(r);
  }
  write_reports(root, "report", rows, {{"runs", runs}, {"split", "test"}}, o.emit_csv, m, root);
  m.json()["runs"] = runs;
  m.write(root);
  if (!o.quiet) write_text(std::cout, rows);
  if (diverged) {
    std::cerr << "error: training diverged (see " << (root / "manifest.json").string()
              << "); last good checkpoints were kept\n";
    return kExitNumerical;
  }
  return kExitOk;
}

struct EvalOptions {
  std::string checkpoint;
  std::vector<std::string> sets;
  std::string output;
  std::string split = "test";
  bool emit_csv = false;
  bool quiet = false;
};

inline RunConfig checkpoint_config(const Checkpoint& ck, const std::vector<std::string>& sets) {
  RunConfig cfg = default_run_config();
  apply_config_text(cfg, ck.config_text, "checkpoint config");
  for (const auto& s : sets) {
    if (s.rfind("data.", 0) != 0 && s.rfind("synthetic.", 0) != 0 && s.rfind("training.max_eval_windows", 0) != 0 &&
        s.rfind("training.batch_size", 0) != 0)
      throw ConfigError("--set " + s + ": only [data], [synthetic] and evaluation settings may be overridden for a "
                        "trained checkpoint");
    apply_override(cfg, s);
  }
  return cfg;
}

inline int cmd_evaluate(const EvalOptions& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  RunConfig trained;
  TimeGmm<Real> model = model_from_checkpoint<Real>(ck, &trained);
  RunConfig cfg = checkpoint_config(ck, o.sets);
  const Dataset data = load_dataset(cfg);
  if (data.frame.variables() != model.config().dims.variables)
    throw DataError("dataset has " + std::to_string(data.frame.variables()) + " variables, checkpoint expects " +
                    std::to_string(model.config().dims.variables));
  const auto origins = split_origins(cfg, data.frame.timesteps());
  const std::vector<std::size_t>* sel = nullptr;
  if (o.split == "test") sel = &origins.test;
  else if (o.split == "val") sel = &origins.val;
  else if (o.split == "train") sel = &origins.train;
  else throw ConfigError("--split must be train, val or test");
  auto ev = evaluate(model, data.frame, *sel, cfg.training.batch_size);
  ev.report.dataset = data.name;
  ev.report.variables = data.frame.names;
  ev.report.seeds = {trained.training.seed};
  ev.report.config_hash = ck.config_hash;
  const fs::path root = o.output.empty() ? fs::path(o.checkpoint).parent_path() : fs::path(o.output);
  fs::create_directories(root.empty() ? fs::path(".") : root);
  Manifest m("evaluate", cfg);
  m.json()["checkpoint"] = o.checkpoint;
  m.json()["split"] = o.split;
  write_file(root / "resolved_config.toml", canonical_config(cfg));
  write_reports(root, "eval_" + o.split, {ev.report},
                {{"split", o.split}, {"checkpoint", o.checkpoint}, {"epoch", ck.epoch}}, o.emit_csv, m, root);
  m.write(root);
  if (!o.quiet) write_text(std::cout, {ev.report});
  return kExitOk;
}

struct PredictOptions {
  std::string checkpoint;
  std::vector<std::string> sets;
  std::string output;
  std::string format = "json";
  long long origin = -1;
};

inline int cmd_predict(const PredictOptions& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  TimeGmm<Real> model = model_from_checkpoint<Real>(ck);
  RunConfig cfg = checkpoint_config(ck, o.sets);
  const Dataset data = load_dataset(cfg);
  const auto& d = model.config().dims;
  const std::size_t N = data.frame.timesteps();
  const std::size_t origin = o.origin < 0 ? N : std::size_t(o.origin);
  if (origin < d.history || origin > N)
    throw DataError("--origin " + std::to_string(origin) + " needs " + std::to_string(d.history) +
                    " history steps inside a series of length " + std::to_string(N));
  Tensor<Real> x({1, d.variables, d.history});
  for (std::size_t v = 0; v < d.variables; ++v)
    for (std::size_t t = 0; t < d.history; ++t) x[v * d.history + t] = Real(data.frame.at(v, origin - d.history + t));
  GmmParams<Real> p = model.predict(x);
  const Shape cell{d.variables, d.horizon, d.components};
  p.w = p.w.reshaped(cell);
  p.mu = p.mu.reshaped(cell);
  p.sigma = p.sigma.reshaped(cell);
  std::ostringstream out;
  if (o.format == "json") {
    out << forecast_json(p, origin, data.frame.names).dump(2) << '\n';
  } else if (o.format == "csv") {
    forecast_csv_header(out);
    forecast_csv_rows(out, p, origin, data.frame.names);
  } else {
    throw ConfigError("--format must be json or csv");
  }
  if (o.output.empty() || o.output == "-")
    std::cout << out.str();
  else
    write_file(o.output, out.str());
  return kExitOk;
}

struct SynthOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string kind;
  long long seed = -1;
  long long length = -1;
  long long variables = -1;
  std::string output = "data";
};

inline int cmd_synth(const SynthOptions& o) {
  RunConfig cfg = o.config.empty() ? default_run_config() : load_run_config(o.config);
  for (const auto& s : o.sets) apply_override(cfg, s);
  auto& s = cfg.synthetic;
  if (!o.kind.empty()) s.kind = parse_synthetic_kind(o.kind);
  if (o.seed >= 0) s.seed = std::uint64_t(o.seed);
  if (o.length >= 0) s.length = std::size_t(o.length);
  if (o.variables >= 0) s.variables = std::size_t(o.variables);
  auto series = generate(s);
  const fs::path dir = o.output;
  fs::create_directories(dir);
  const std::string stem = to_string(s.kind);
  write_csv(series.frame, (dir / (stem + ".csv")).string());
  write_file(dir / (stem + ".json"), series.descriptor.dump(2) + "\n");
  std::cout << "wrote " << (dir / (stem + ".csv")).string() << " (" << series.frame.timesteps() << " steps, "
            << series.frame.variables() << " variables) and " << (dir / (stem + ".json")).string() << '\n';
  return kExitOk;
}

inline int cmd_ablate(const CommonOptions& o) {
  RunConfig cfg = resolve(o);
  const fs::path root = cfg.output_dir;
  fs::create_directories(root);
  write_file(root / "resolved_config.toml", canonical_config(cfg));
  Manifest m("ablate", cfg);
  const Dataset data = load_dataset(cfg);
  const auto seeds = seed_list(cfg);
  std::vector<MetricReport> rows;
  nlohmann::json variants = nlohmann::json::array();
  bool diverged = false;
  for (const auto& v : ablation_variants()) {
    std::vector<MetricReport> per_seed;
    nlohmann::json runs = nlohmann::json::array();
    for (std::uint64_t seed : seeds) {
      RunConfig c = cfg;
      c.training.no_gmm = cfg.training.no_gmm || v.no_gmm;
      c.training.no_grin = cfg.training.no_grin || v.no_grin;
      c.training.seed = seed;
      c.seeds.clear();
      c.horizons.clear();
      const fs::path dir = root / slug(v.name) / ("seed" + std::to_string(seed));
      if (!o.quiet) std::cout << "== " << v.name << " seed " << seed << '\n';
      auto out = train_one(c, data, dir, root, m, o.quiet);
      diverged = diverged || out.run.result.diverged;
      runs.push_back(run_summary(out.run));
      per_seed.push_back(out.run.test);
    }
    MetricReport r = combine_seeds(per_seed);
    r.dataset = data.name + " [" + v.name + "]";
    rows.push_back(r);
    variants.push_back({{"variant", v.name}, {"no_gmm", v.no_gmm}, {"no_grin", v.no_grin}, {"runs", runs}});
  }
  // Paired differences against the full model, seed by seed.
  for (std::size_t i = 1; i < variants.size(); ++i) {
    nlohmann::json diffs = nlohmann::json::array();
    for (std::size_t s = 0; s < seeds.size(); ++s)
      diffs.push_back(variants[i]["runs"][s]["test_crps"].get<double>() -
                      variants[0]["runs"][s]["test_crps"].get<double>());
    variants[i]["paired_crps_minus_full"] = diffs;
  }
  write_reports(root, "ablation", rows, {{"variants", variants}, {"split", "test"}}, o.emit_csv, m, root);
  m.json()["variants"] = variants;
  m.write(root);
  if (!o.quiet) write_text(std::cout, rows);
  if (diverged) {
    std::cerr << "error: at least one ablation run diverged (see " << (root / "ablation.json").string() << ")\n";
    return kExitNumerical;
  }
  return kExitOk;
}

struct GradcheckOptions {
  std::string dims = "toy";
  std::string config;
  std::vector<std::string> sets;
  std::string output;
};

inline int cmd_gradcheck(const GradcheckOptions& o) {
  ModelConfig mc;
  if (o.dims == "toy") {
    mc = toy_model_config();
  } else if (o.dims == "config") {
    RunConfig cfg = o.config.empty() ? default_run_config() : load_run_config(o.config);
    for (const auto& s : o.sets) apply_override(cfg, s);
    mc = cfg.effective_model(cfg.model.dims.variables ? cfg.model.dims.variables : 1);
  } else {
    throw ConfigError("--dims must be toy or config");
  }
  mc.validate();
  const auto t0 = std::chrono::steady_clock::now();
  std::printf("%-13s %-40s %12s %9s  %s\n", "module", "check", "max_rel_err", "elements", "result");
  auto rows = run_gradcheck_suite(mc, {}, [](const GradCheckRow& r) {
    std::printf("%-13s %-40s %12.3e %9zu  %s\n", r.module.c_str(), r.name.c_str(), r.max_rel_error, r.checked,
                r.passed ? "PASS" : ("FAIL (" + r.worst + ")").c_str());
    std::fflush(stdout);
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool ok = true;
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    ok = ok && r.passed;
    j.push_back({{"module", r.module},
                 {"check", r.name},
                 {"max_rel_error", r.max_rel_error},
                 {"tolerance", r.tolerance},
                 {"elements", r.checked},
                 {"passed", r.passed}});
  }
  std::printf("%s: %zu checks, tolerance %.0e, %.1f s\n", ok ? "all passed" : "FAILED", rows.size(),
              rows.empty() ? 0.0 : rows.front().tolerance, secs);
  if (!o.output.empty())
    write_file(o.output, nlohmann::json{{"checks", j}, {"passed", ok}, {"seconds", secs}}.dump(2) + "\n");
  return ok ? kExitOk : kExitNumerical;
}

inline void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.config, "Config file (sectioned key = value)");
  app->add_option("--set", o.sets, "Override: section.key=value (repeatable, applied after the file)");
  app->add_option("-o,--output", o.output, "Output directory (overrides run.output_dir)");
  app->add_option("--seeds", o.seeds, "Seed count N (seeds training.seed..+N-1) or a comma list");
  app->add_option("--horizons", o.horizons, "Comma-separated forecast horizons to sweep");
  app->add_flag("--emit-csv", o.emit_csv, "Also write reports as CSV");
  app->add_flag("-q,--quiet", o.quiet, "Only write files");
}

}  // namespace detail

/// Entry point for the `timegmm` executable. Returns the process exit code.
inline int run(int argc, const char* const* argv) {
  CLI::App app{"TimeGMM: probabilistic forecasting with Gaussian mixture outputs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "timegmm 1.0.0 (" + std::string(kPrecision) + ")");

  CommonOptions train_o, ablate_o;
  auto* train = app.add_subcommand("train", "Train, select on validation CRPS, score the test split");
  detail::add_common(train, train_o);

  detail::EvalOptions eval_o;
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a data split");
  evaluate->add_option("checkpoint,--checkpoint", eval_o.checkpoint, "Checkpoint file")->required();
  evaluate->add_option("--split", eval_o.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  evaluate->add_option("--set", eval_o.sets, "Data override: data.key=value or synthetic.key=value");
  evaluate->add_option("-o,--output", eval_o.output, "Report directory (default: next to the checkpoint)");
  evaluate->add_flag("--emit-csv", eval_o.emit_csv, "Also write the report as CSV");
  evaluate->add_flag("-q,--quiet", eval_o.quiet, "Only write files");

  detail::PredictOptions pred_o;
  auto* predict = app.add_subcommand("predict", "Export the mixture forecast for one origin");
  predict->add_option("checkpoint,--checkpoint", pred_o.checkpoint, "Checkpoint file")->required();
  predict->add_option("--origin", pred_o.origin, "First forecast index (default: end of the series)");
  predict->add_option("--format", pred_o.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  predict->add_option("--set", pred_o.sets, "Data override: data.key=value or synthetic.key=value");
  predict->add_option("-o,--output", pred_o.output, "Output file (default: stdout)");

  detail::SynthOptions synth_o;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset CSV and its ground-truth descriptor");
  synth->add_option("-c,--config", synth_o.config, "Config file supplying [synthetic]");
  synth->add_option("--set", synth_o.sets, "Override: synthetic.key=value");
  synth->add_option("--kind", synth_o.kind, "bimodal-ar, regime-shift or sine-mixture");
  synth->add_option("--seed", synth_o.seed, "Generator seed");
  synth->add_option("--length", synth_o.length, "Series length");
  synth->add_option("--variables", synth_o.variables, "Number of variables");
  synth->add_option("-o,--output", synth_o.output, "Output directory");

  auto* ablate = app.add_subcommand("ablate", "Train the full model and the w/o GMM / w/o GRIN variants");
  detail::add_common(ablate, ablate_o);

  detail::GradcheckOptions gc_o;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op and of the full loss");
  gradcheck->add_option("--dims", gc_o.dims, "toy, or config to use the model from -c/--set")
      ->check(CLI::IsMember({"toy", "config"}));
  gradcheck->add_option("-c,--config", gc_o.config, "Config file (with --dims config)");
  gradcheck->add_option("--set", gc_o.sets, "Override: section.key=value");
  gradcheck->add_option("-o,--output", gc_o.output, "Write results as JSON to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) return detail::cmd_train(train_o);
    if (*evaluate) return detail::cmd_evaluate(eval_o);
    if (*predict) return detail::cmd_predict(pred_o);
    if (*synth) return detail::cmd_synth(synth_o);
    if (*ablate) return detail::cmd_ablate(ablate_o);
    if (*gradcheck) return detail::cmd_gradcheck(gc_o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace timegmm::cli
