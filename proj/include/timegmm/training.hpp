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
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "timegmm/checkpoint.hpp"
#include "timegmm/config.hpp"
#include "timegmm/data.hpp"
#include "timegmm/metrics.hpp"
#include "timegmm/model.hpp"
#include "timegmm/optim.hpp"
#include "timegmm/synthetic.hpp"

namespace timegmm {

struct Dataset {
  SeriesFrame frame;
  std::string name;
  nlohmann::json descriptor;  // synthetic ground truth, null for CSV input
};

inline Dataset load_dataset(const RunConfig& cfg) {
  Dataset d;
  if (cfg.data.source == "csv") {
    if (cfg.data.path.empty()) throw ConfigError("data.source = \"csv\" needs data.path");
    CsvSchema schema;
    if (!cfg.data.frequency.empty()) schema.frequency = cfg.data.frequency;
    d.frame = load_csv(cfg.data.path, schema);
    d.name = cfg.data.name.empty() ? std::filesystem::path(cfg.data.path).stem().string() : cfg.data.name;
  } else if (cfg.data.source == "synthetic") {
    auto s = generate(cfg.synthetic);
    d.frame = std::move(s.frame);
    d.descriptor = std::move(s.descriptor);
    d.name = cfg.data.name.empty() ? to_string(cfg.synthetic.kind) : cfg.data.name;
  } else {
    throw ConfigError("data.source must be \"csv\" or \"synthetic\", got '" + cfg.data.source + "'");
  }
  return d;
}

/// Evenly spaced subsample of at most `cap` origins (0 keeps all).
inline std::vector<std::size_t> cap_origins(std::vector<std::size_t> o, std::size_t cap) {
  if (cap == 0 || o.size() <= cap) return o;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cap; ++i) out.push_back(o[(i * o.size()) / cap]);
  return out;
}

struct SplitOrigins {
  std::vector<std::size_t> train, val, test;
};

inline SplitOrigins split_origins(const RunConfig& cfg, std::size_t timesteps) {
  const auto& d = cfg.model.dims;
  const auto segs = split_segments(timesteps, cfg.data.split);
  const std::size_t eval = cfg.data.split.eval_stride ? cfg.data.split.eval_stride : d.horizon;
  return {cap_origins(window_origins(segs.train, d.history, d.horizon, cfg.data.split.stride),
                      cfg.training.max_train_windows),
          cap_origins(window_origins(segs.val, d.history, d.horizon, eval), cfg.training.max_eval_windows),
          cap_origins(window_origins(segs.test, d.history, d.horizon, eval), cfg.training.max_eval_windows)};
}

/// Per-variable mean and population std over the training segment (std 1
/// for constant variables).
template <class T>
DatasetStats<T> train_statistics(const SeriesFrame& f, const Segment& train) {
  const std::size_t V = f.variables();
  DatasetStats<T> s{Tensor<T>({V}), Tensor<T>({V})};
  for (std::size_t v = 0; v < V; ++v) {
    double m = 0, q = 0;
    for (std::size_t t = train.begin; t < train.end; ++t) m += f.at(v, t);
    m /= double(train.span());
    for (std::size_t t = train.begin; t < train.end; ++t) q += (f.at(v, t) - m) * (f.at(v, t) - m);
    const double sd = std::sqrt(q / double(train.span()));
    s.mean[v] = T(m);
    s.stddev[v] = T(sd > 0 ? sd : 1.0);
  }
  return s;
}

template <class T>
struct Batch {
  Tensor<T> history;  // [B, V, L_h]
  Tensor<T> future;   // [B, V, L_f]
};

template <class T>
Batch<T> make_batch(const SeriesFrame& f, std::span<const std::size_t> origins, std::size_t L_h, std::size_t L_f) {
  const std::size_t B = origins.size(), V = f.variables(), N = f.timesteps();
  Batch<T> b{Tensor<T>({B, V, L_h}), Tensor<T>({B, V, L_f})};
  const double* src = f.values.data();
  for (std::size_t i = 0; i < B; ++i) {
    const std::size_t o = origins[i];
    if (o < L_h || o + L_f > N) throw DataError("window at origin " + std::to_string(o) + " exceeds the series");
    for (std::size_t v = 0; v < V; ++v) {
      for (std::size_t t = 0; t < L_h; ++t) b.history[(i * V + v) * L_h + t] = T(src[v * N + o - L_h + t]);
      for (std::size_t t = 0; t < L_f; ++t) b.future[(i * V + v) * L_f + t] = T(src[v * N + o + t]);
    }
  }
  return b;
}

inline std::size_t worker_count() {
  if (const char* env = std::getenv("TIMEGMM_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && n >= 1) return std::size_t(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

struct EvalResult {
  MetricReport report;
  /// Mean NLL per cell under softmax weights.
  double nll = 0;
  /// Mean |sum_k softplus(w_raw) - 1| per cell, before test-time softmax.
  double weight_deviation = 0;
};

/// Scores `origins` with test-time (softmax) weights. Batches are fixed by
/// `batch_size` and reduced in origin order, so the result does not depend on
/// the number of worker threads.
template <class T>
EvalResult evaluate(const TimeGmm<T>& model, const SeriesFrame& frame, const std::vector<std::size_t>& origins,
                    std::size_t batch_size, std::size_t threads = 0) {
  if (origins.empty()) throw DataError("no evaluation windows (segment too short for history + horizon)");
  const auto& d = model.config().dims;
  const std::size_t V = d.variables, L = d.horizon, K = d.components;
  const std::size_t batches = (origins.size() + batch_size - 1) / batch_size;
  std::vector<MetricAccumulator> accs(batches, MetricAccumulator(V));
  std::vector<double> nll(origins.size()), wdev(origins.size());
  auto work = [&](std::size_t bi) {
    const std::size_t lo = bi * batch_size, hi = std::min(origins.size(), lo + batch_size);
    std::span<const std::size_t> span(origins.data() + lo, hi - lo);
    auto batch = make_batch<T>(frame, span, d.history, L);
    Tape<T> tape(const_cast<ParameterSet<T>*>(&model.params()), false);
    auto r = model.forward(tape, batch.history);
    const Tensor<T> w = normalize_weights(r.w_raw.value());
    const Tensor<T> wsum = sum_last(softplus(r.w_raw)).value();
    const std::size_t cell = V * L * K;
    for (std::size_t i = 0; i < span.size(); ++i) {
      GmmParams<T> p;
      p.w = Tensor<T>({V, L, K}, std::vector<T>(w.data() + i * cell, w.data() + (i + 1) * cell));
      p.mu = Tensor<T>({V, L, K}, std::vector<T>(r.mu.value().data() + i * cell, r.mu.value().data() + (i + 1) * cell));
      p.sigma = Tensor<T>({V, L, K},
                          std::vector<T>(r.sigma.value().data() + i * cell, r.sigma.value().data() + (i + 1) * cell));
      p.normalized = true;
      Tensor<T> y({V, L}, std::vector<T>(batch.future.data() + i * V * L, batch.future.data() + (i + 1) * V * L));
      accs[bi].add(span[i], p, y);
      double n = 0, dv = 0;
      for (std::size_t c = 0; c < V * L; ++c) {
        n -= double(log_pdf(y[c], p.cell(c)));
        dv += std::abs(double(wsum[i * V * L + c]) - 1.0);
      }
      nll[lo + i] = n;
      wdev[lo + i] = dv;
    }
  };
  const std::size_t n_threads = std::min(batches, threads ? threads : worker_count());
  if (n_threads <= 1) {
    for (std::size_t b = 0; b < batches; ++b) work(b);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t)
      pool.emplace_back([&, t] {
        try {
          for (std::size_t b = t; b < batches; b += n_threads) work(b);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  MetricAccumulator all(V);
  for (auto& a : accs) all.merge(std::move(a));
  EvalResult res;
  res.report = all.finish(std::vector<std::string>());
  double n = 0, dv = 0;
  for (std::size_t i = 0; i < origins.size(); ++i) {
    n += nll[i];
    dv += wdev[i];
  }
  const double cells = double(origins.size() * V * L);
  res.nll = n / cells;
  res.weight_deviation = dv / cells;
  res.report.extras = {{"nll", res.nll}, {"weight_deviation", res.weight_deviation}};
  return res;
}

// ---------------------------------------------------------------------------
// Training.

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0, train_nll = 0, train_mean = 0, train_weight = 0;
  double val_crps = 0, val_nll = 0, val_weight_deviation = 0;
  bool improved = false;
};

inline std::string format_epoch(const EpochLog& e) {
  char buf[512];
  if (e.epoch == 0) {
    // Epoch 0 scores the initial weights; there is no training loss yet.
    std::snprintf(buf, sizeof buf, "epoch 0 init val_crps=%.17g val_nll=%.17g val_wdev=%.17g%s", e.val_crps,
                  e.val_nll, e.val_weight_deviation, e.improved ? " best" : "");
    return buf;
  }
  std::snprintf(buf, sizeof buf,
                "epoch %zu loss=%.17g nll=%.17g mean=%.17g weight=%.17g val_crps=%.17g val_nll=%.17g "
                "val_wdev=%.17g%s",
                e.epoch, e.train_loss, e.train_nll, e.train_mean, e.train_weight, e.val_crps, e.val_nll,
                e.val_weight_deviation, e.improved ? " best" : "");
  return buf;
}

template <class T>
struct TrainResult {
  TimeGmm<T> model;  // best validation checkpoint
  Checkpoint best;
  Checkpoint last;
  std::vector<EpochLog> epochs;  // epochs[0] is the untrained model
  std::vector<std::string> log;
  std::size_t best_epoch = 0;
  double best_score = 0;
  bool diverged = false;
  std::string stop_reason;
  SplitOrigins origins;
};

/// Builds the model (and dataset statistics for the no-GRIN ablation) for `cfg`.
template <class T>
TimeGmm<T> build_model(const RunConfig& cfg, const SeriesFrame& frame) {
  TimeGmm<T> model(cfg.effective_model(frame.variables()), cfg.training.seed);
  model.set_dataset_stats(train_statistics<T>(frame, split_segments(frame.timesteps(), cfg.data.split).train));
  return model;
}

template <class T>
Checkpoint snapshot(const RunConfig& cfg, const TimeGmm<T>& model, const AdamW<T>* opt, std::size_t epoch,
                    double score) {
  Checkpoint ck;
  ck.config_text = canonical_config(cfg, false);
  ck.config_hash = config_hash(cfg);
  ck.epoch = epoch;
  ck.validation_score = score;
  store_model(ck, model, opt);
  return ck;
}

/// Rebuilds a model from a checkpoint's embedded configuration.
template <class T>
TimeGmm<T> model_from_checkpoint(const Checkpoint& ck, RunConfig* cfg_out = nullptr) {
  RunConfig cfg = default_run_config();
  apply_config_text(cfg, ck.config_text, "checkpoint config");
  const std::size_t V = ck.get("data/mean").shape.at(0);
  TimeGmm<T> model(cfg.effective_model(V), cfg.training.seed);
  restore_model(ck, model);
  if (cfg_out) *cfg_out = cfg;
  return model;
}

/// Epoch loop minimizing the composite loss, selecting on validation CRPS.
/// `on_line` receives each deterministic log line as it is produced.
template <class T>
TrainResult<T> train(const RunConfig& cfg, const Dataset& data,
                     const std::function<void(const std::string&)>& on_line = {}) {
  cfg.training.validate();
  const auto& frame = data.frame;
  TimeGmm<T> model = build_model<T>(cfg, frame);
  const auto& d = model.config().dims;
  SplitOrigins origins = split_origins(cfg, frame.timesteps());
  if (origins.train.empty()) throw DataError("training split has no windows of length history + horizon");
  if (origins.val.empty()) throw DataError("validation split has no windows of length history + horizon");

  AdamW<T> opt(model.params(), cfg.training.adam);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult<T> res{model, {}, {}, {}, {}, 0, 0, false, "", origins};
  auto emit = [&](const std::string& line) {
    res.log.push_back(line);
    if (on_line) on_line(line);
  };
  {
    char buf[256];
    std::snprintf(buf, sizeof buf, "config_hash=%016llx parameters=%zu scalars=%zu train_windows=%zu val_windows=%zu",
                  static_cast<unsigned long long>(config_hash(cfg)), model.params().size(),
                  model.params().scalar_count(), origins.train.size(), origins.val.size());
    emit(buf);
  }
  auto validate = [&](EpochLog& e) {
    auto ev = evaluate(model, frame, origins.val, cfg.training.batch_size);
    e.val_crps = ev.report.crps;
    e.val_nll = ev.nll;
    e.val_weight_deviation = ev.weight_deviation;
  };

  EpochLog e0;
  validate(e0);
  e0.improved = true;
  res.best_score = e0.val_crps;
  res.best = snapshot(cfg, model, &opt, 0, e0.val_crps);
  res.epochs.push_back(e0);
  emit(format_epoch(e0));

  std::size_t bad = 0;
  std::string divergence;
  std::vector<std::size_t> order = origins.train;
  for (std::size_t epoch = 1; epoch <= cfg.training.max_epochs; ++epoch) {
    Rng shuffle = Rng::named(cfg.training.seed, "shuffle/" + std::to_string(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    EpochLog e;
    e.epoch = epoch;
    std::size_t steps = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.training.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.training.batch_size);
      auto batch = make_batch<T>(frame, std::span<const std::size_t>(order.data() + lo, hi - lo), d.history, d.horizon);
      double loss = 0, nll = 0, mean = 0, weight = 0;
      try {
        Tape<T> tape(&model.params());
        auto terms = model.loss(tape, batch.history, batch.future, cfg.training.loss);
        loss = double(terms.total.item());
        nll = double(terms.nll.item());
        mean = double(terms.mean.item());
        weight = double(terms.weight.item());
        if (!std::isfinite(loss)) throw NumericalError("non-finite training loss");
        tape.backward(terms.total);
        clip_grad_norm(model.params(), T(cfg.training.clip_norm));
        opt.step(model.params());
      } catch (const NumericalError& err) {
        res.diverged = true;
        divergence = err.what();
        break;
      }
      e.train_loss += loss;
      e.train_nll += nll;
      e.train_mean += mean;
      e.train_weight += weight;
      ++steps;
    }
    if (res.diverged) {
      res.stop_reason = "diverged in epoch " + std::to_string(epoch) + " (" + divergence + ")";
      emit("stop: " + res.stop_reason);
      break;
    }
    e.train_loss /= double(steps);
    e.train_nll /= double(steps);
    e.train_mean /= double(steps);
    e.train_weight /= double(steps);
    validate(e);
    if (!std::isfinite(e.val_crps)) {
      res.diverged = true;
      res.stop_reason = "non-finite validation score in epoch " + std::to_string(epoch);
      emit(format_epoch(e));
      emit("stop: " + res.stop_reason);
      break;
    }
    e.improved = e.val_crps < res.best_score;
    if (e.improved) {
      res.best_score = e.val_crps;
      res.best_epoch = epoch;
      res.best = snapshot(cfg, model, &opt, epoch, e.val_crps);
      bad = 0;
    } else {
      ++bad;
    }
    res.epochs.push_back(e);
    emit(format_epoch(e));
    if (bad >= cfg.training.patience) {
      res.stop_reason = "early stop after " + std::to_string(bad) + " epochs without improvement";
      break;
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cfg.training.max_seconds > 0 && elapsed >= cfg.training.max_seconds) {
      res.stop_reason = "time budget reached";
      break;
    }
  }
  if (res.stop_reason.empty()) res.stop_reason = "max epochs reached";
  if (!res.diverged) emit("stop: " + res.stop_reason);
  res.last = snapshot(cfg, model, &opt, res.epochs.back().epoch, res.epochs.back().val_crps);
  char buf[128];
  std::snprintf(buf, sizeof buf, "best_epoch=%zu best_val_crps=%.17g", res.best_epoch, res.best_score);
  emit(buf);
  restore_model(res.best, res.model);
  return res;
}

// ---------------------------------------------------------------------------
// Experiments.

struct Variant {
  std::string name;
  bool no_gmm = false, no_grin = false;
};

inline const std::vector<Variant>& ablation_variants() {
  static const std::vector<Variant> v{
      {"TimeGMM", false, false}, {"w/o GMM", true, false}, {"w/o GRIN", false, true}, {"w/o GMM & GRIN", true, true}};
  return v;
}

template <class T>
struct SeedRun {
  std::uint64_t seed = 0;
  MetricReport test;
  EvalResult val;
  TrainResult<T> result;
};

/// Trains with `cfg` and scores the best checkpoint on the test split.
template <class T>
SeedRun<T> train_and_test(const RunConfig& cfg, const Dataset& data,
                          const std::function<void(const std::string&)>& on_line = {}) {
  auto tr = train<T>(cfg, data, on_line);
  if (tr.origins.test.empty()) throw DataError("test split has no windows of length history + horizon");
  auto val = evaluate(tr.model, data.frame, tr.origins.val, cfg.training.batch_size);
  auto test = evaluate(tr.model, data.frame, tr.origins.test, cfg.training.batch_size);
  test.report.dataset = data.name;
  test.report.variables = data.frame.names;
  test.report.seeds = {cfg.training.seed};
  test.report.config_hash = config_hash(cfg);
  return SeedRun<T>{cfg.training.seed, test.report, val, std::move(tr)};
}

inline std::vector<std::uint64_t> seed_list(const RunConfig& cfg) {
  return cfg.seeds.empty() ? std::vector<std::uint64_t>{cfg.training.seed} : cfg.seeds;
}

}  // namespace timegmm
