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

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "timegmm/gradcheck.hpp"
#include "timegmm/model.hpp"
#include "timegmm/ops.hpp"
#include "timegmm/rng.hpp"

namespace timegmm {

/// One row of the gradient-check table.
struct GradCheckRow {
  std::string module;
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;
  std::size_t checked = 0;
  bool passed = false;
  std::string worst;  // parameter holding the worst element
};

struct GradCheckSuiteOptions {
  std::size_t op_seeds = 5;
  double tolerance = 1e-4;
  double step = 1e-6;
  /// Central-difference step for the long-double model checks; smaller steps
  /// hit round-off on gradients of order 1e-9.
  double model_step = 1e-5;
};

/// Model dimensions used by `gradcheck --dims toy`.
inline ModelConfig toy_model_config() {
  ModelConfig c;
  c.dims.variables = 2;
  c.dims.history = 32;
  c.dims.horizon = 16;
  c.dims.d_model = 16;
  c.dims.encoder_layers = 1;
  c.dims.decoder_layers = 1;
  c.dims.components = 2;
  return c;
}

namespace detail {

template <class T>
Tensor<T> gc_random(Shape shape, Rng& rng, double scale = 1.0, double offset = 0.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = T(offset + scale * rng.normal());
  return t;
}

template <class T>
GradCheckRow gc_row(std::string module, std::string name, const GradCheckReport<T>& r) {
  GradCheckRow row{std::move(module), std::move(name), double(r.max_rel_error()), double(r.tolerance), 0, r.passed(),
                   ""};
  T worst = -1;
  for (const auto& e : r.entries) {
    row.checked += e.checked;
    if (e.max_rel_error > worst) {
      worst = e.max_rel_error;
      row.worst = e.id;
    }
  }
  return row;
}

/// Worst relative error of d/dinputs sum(op(inputs) * R) over several seeds.
using OpFn = std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>;

inline GradCheckRow op_row(const std::string& module, const std::string& name, const std::vector<Shape>& shapes,
                           const OpFn& op, const GradCheckSuiteOptions& o, double scale = 1.0, double offset = 0.0) {
  GradCheckRow out{module, name, 0, o.tolerance, 0, true, ""};
  for (std::uint64_t seed = 0; seed < o.op_seeds; ++seed) {
    Rng rng = Rng::named(seed, "gradcheck/" + name);
    ParameterSet<double> ps;
    for (std::size_t i = 0; i < shapes.size(); ++i) ps.add("in" + std::to_string(i), gc_random<double>(shapes[i], rng, scale, offset));
    Tensor<double> weights;
    bool have_weights = false;
    auto loss = [&](Tape<double>& tape) {
      std::vector<Var<double>> in;
      for (std::size_t i = 0; i < ps.size(); ++i) in.push_back(tape.param(i));
      Var<double> y = op(tape, in);
      if (!have_weights) {
        weights = gc_random<double>(y.shape(), rng);
        have_weights = true;
      }
      return sum(y * tape.constant(weights));
    };
    auto r = gc_row(module, name, grad_check<double>(loss, ps, o.step, o.tolerance));
    out.checked += r.checked;
    if (r.max_rel_error >= out.max_rel_error) {
      out.max_rel_error = r.max_rel_error;
      out.worst = r.worst;
    }
  }
  out.passed = out.max_rel_error <= out.tolerance;
  return out;
}

}  // namespace detail

/// Cases for every differentiable primitive, one row each.
inline std::vector<GradCheckRow> primitive_gradchecks(const GradCheckSuiteOptions& o = {},
                                                      const std::function<void(const GradCheckRow&)>& on_row = {}) {
  using detail::op_row;
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    detail::OpFn op;
    double scale = 1.0, offset = 0.0;
  };
  const std::vector<Case> cases = {
      {"add.broadcast", {{2, 3, 4}, {3, 1}}, [](auto&, auto& in) { return in[0] + in[1]; }},
      {"sub.broadcast", {{2, 3, 4}, {4}}, [](auto&, auto& in) { return in[0] - in[1]; }},
      {"mul.broadcast", {{2, 3, 4}, {2, 1, 4}}, [](auto&, auto& in) { return in[0] * in[1]; }},
      {"div", {{3, 4}, {3, 4}}, [](auto&, auto& in) { return in[0] / in[1]; }, 0.5, 2.0},
      {"exp", {{5}}, [](auto&, auto& in) { return exp(in[0]); }},
      {"log", {{5}}, [](auto&, auto& in) { return log(in[0]); }, 0.3, 2.0},
      {"sqrt", {{5}}, [](auto&, auto& in) { return sqrt(in[0]); }, 0.3, 2.0},
      {"square", {{5}}, [](auto&, auto& in) { return square(in[0]); }},
      {"softplus", {{7}}, [](auto&, auto& in) { return softplus(in[0]); }, 3.0},
      {"log_softplus", {{7}}, [](auto&, auto& in) { return log_softplus(in[0]); }, 3.0},
      {"gelu", {{7}}, [](auto&, auto& in) { return gelu(in[0]); }, 2.0},
      {"scale.shift", {{4}}, [](auto&, auto& in) { return shift(scale(in[0], 3.0), 1.5); }},
      {"reshape", {{2, 6}}, [](auto&, auto& in) { return reshape(in[0], {3, 4}); }},
      {"slice_last", {{3, 6}}, [](auto&, auto& in) { return slice_last(in[0], 2, 3); }},
      {"gather", {{6}}, [](auto&, auto& in) { return gather(in[0], {0, 2, 2, 5, 1, 5}, {2, 3}); }},
      {"sum_last", {{3, 5}}, [](auto&, auto& in) { return sum_last(in[0]); }},
      {"mean_last", {{3, 5}}, [](auto&, auto& in) { return mean_last(in[0]); }},
      {"mean", {{3, 5}}, [](auto&, auto& in) { return mean(in[0]); }},
      {"logsumexp_last", {{3, 4}}, [](auto&, auto& in) { return logsumexp_last(in[0]); }},
      {"matmul", {{5, 4}, {4, 3}}, [](auto&, auto& in) { return matmul(in[0], in[1]); }},
      {"linear", {{2, 3, 4}, {4, 5}, {5}}, [](auto&, auto& in) { return linear(in[0], in[1], in[2]); }},
      {"layer_norm", {{3, 6}}, [](auto&, auto& in) { return layer_norm(in[0], 1e-5); }},
      {"layer_norm.affine", {{3, 6}, {6}, {6}}, [](auto&, auto& in) { return layer_norm(in[0], in[1], in[2], 1e-5); }},
      {"softmax.axis0", {{4, 3}}, [](auto&, auto& in) { return softmax(in[0], 0); }},
      {"softmax.last", {{3, 4}}, [](auto&, auto& in) { return softmax(in[0]); }},
      {"attention", {{2, 4, 8}, {2, 4, 8}, {2, 4, 8}}, [](auto&, auto& in) { return attention(in[0], in[1], in[2], 2); }},
      {"moving_average", {{2, 9}}, [](auto&, auto& in) { return moving_average_last(in[0], 5); }},
  };
  std::vector<GradCheckRow> rows;
  for (const auto& c : cases) {
    rows.push_back(op_row("numeric-core", c.name, c.shapes, c.op, o, c.scale, c.offset));
    if (on_row) on_row(rows.back());
  }
  return rows;
}

/// Composite checks on a model. Runs in long double: several gradients
/// (attention scores, low-responsibility components) sit below the 64-bit
/// central-difference noise floor.
inline std::vector<GradCheckRow> model_gradchecks(const ModelConfig& cfg, const GradCheckSuiteOptions& o = {},
                                                  const std::function<void(const GradCheckRow&)>& on_row = {}) {
  using L = long double;
  std::vector<GradCheckRow> rows;
  auto push = [&](GradCheckRow r) {
    rows.push_back(std::move(r));
    if (on_row) on_row(rows.back());
  };
  const auto& d = cfg.dims;
  const std::size_t B = 2;
  Rng rng = Rng::named(1, "gradcheck/model");
  const L step = L(o.model_step), tol = L(o.tolerance);

  {
    ParameterSet<L> ps;
    ps.add("history", detail::gc_random<L>({B, d.variables, d.history}, rng));
    ps.add("a_raw", detail::gc_random<L>({d.variables}, rng, 0.5));
    ps.add("b", detail::gc_random<L>({d.variables}, rng, 0.5));
    ps.add("mu_norm", detail::gc_random<L>({B, d.variables, d.horizon, d.components}, rng));
    ps.add("sigma_norm", detail::gc_random<L>({B, d.variables, d.horizon, d.components}, rng, 0.2, 1.0));
    auto r1 = detail::gc_random<L>({B, d.variables, d.history}, rng);
    auto r2 = detail::gc_random<L>({B, d.variables, d.horizon, d.components}, rng);
    auto loss = [&](Tape<L>& t) {
      auto g = grin_norm(t.param(0), grin_scale(t.param(1), L(cfg.grin_scale_floor)), t.param(2), L(cfg.grin_eps));
      auto [mu, sigma] = grin_denorm(t.param(3), t.param(4), g.state);
      return sum(g.normalized * t.constant(r1)) + sum((mu + sigma) * t.constant(r2));
    };
    push(detail::gc_row("grin-decomp", "grin norm/denorm", grad_check(loss, ps, step, tol)));
  }
  {
    ParameterSet<L> ps;
    ps.add("x", detail::gc_random<L>({B, d.variables, d.history}, rng));
    auto r1 = detail::gc_random<L>({B, d.variables, d.history}, rng);
    auto r2 = detail::gc_random<L>({B, d.variables, d.history}, rng);
    auto loss = [&](Tape<L>& t) {
      auto p = series_decomp(t.param(0), cfg.decomp_kernel);
      return sum(p.trend * t.constant(r1)) + sum(p.seasonal * t.constant(r2));
    };
    push(detail::gc_row("grin-decomp", "series decomposition", grad_check(loss, ps, step, tol)));
  }
  {
    Tensor<L> w_raw({B, d.variables, d.horizon, d.components}), mu(w_raw.shape()), sg(w_raw.shape());
    for (auto& v : w_raw.values()) v = L(rng.normal());
    for (auto& v : mu.values()) v = L(rng.normal());
    for (auto& v : sg.values()) v = L(0.3 + std::abs(rng.normal()));
    auto y = detail::gc_random<L>({B, d.variables, d.horizon, 1}, rng);
    ParameterSet<L> ps;
    ps.add("w_raw", w_raw);
    ps.add("mu", mu);
    ps.add("sigma", sg);
    auto loss = [&](Tape<L>& t) { return total_loss(t.param(0), t.param(1), t.param(2), t.constant(y), LossWeights{}).total; };
    push(detail::gc_row("gmm-dist", "composite loss on raw parameters", grad_check(loss, ps, step, tol)));
  }
  {
    // Whole model, every parameter element, from perturbed weights so that
    // each sub-layer carries signal.
    TimeGmm<L> model(cfg, 3);
    for (auto& p : model.params())
      for (auto& v : p.value.values()) v += L(0.05 * rng.normal());
    auto x = detail::gc_random<L>({B, d.variables, d.history}, rng);
    auto y = detail::gc_random<L>({B, d.variables, d.horizon}, rng);
    auto loss = [&](Tape<L>& t) { return model.loss(t, x, y, LossWeights{}).total; };
    auto report = grad_check(loss, model.params(), step, tol);
    // Split into per-module rows by parameter prefix.
    const std::vector<std::pair<std::string, std::string>> groups{
        {"grin-decomp", "grin."}, {"encoder", "encoder."}, {"decoder", "decoder."}};
    for (const auto& [module, prefix] : groups) {
      GradCheckReport<L> part;
      part.tolerance = tol;
      for (const auto& e : report.entries)
        if (e.id.rfind(prefix, 0) == 0) part.entries.push_back(e);
      push(detail::gc_row(module, "full loss wrt " + prefix + "*", part));
    }
    push(detail::gc_row("training", "full composite loss, all parameters", report));
  }
  return rows;
}

inline std::vector<GradCheckRow> run_gradcheck_suite(const ModelConfig& cfg, const GradCheckSuiteOptions& o = {},
                                                     const std::function<void(const GradCheckRow&)>& on_row = {}) {
  auto rows = primitive_gradchecks(o, on_row);
  auto more = model_gradchecks(cfg, o, on_row);
  rows.insert(rows.end(), more.begin(), more.end());
  return rows;
}

}  // namespace timegmm
