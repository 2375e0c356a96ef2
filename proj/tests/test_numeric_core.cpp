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

#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <numbers>

#include "timegmm/gradcheck.hpp"
#include "timegmm/ops.hpp"
#include "timegmm/rng.hpp"

using namespace timegmm;
using Catch::Approx;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

/// Checks d/dinputs of sum(op(inputs) * R) for a fixed random R.
double op_gradient_error(const std::vector<Shape>& shapes,
                         const std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>& op,
                         std::uint64_t seed, double input_scale = 1.0, double offset = 0.0) {
  Rng rng(seed);
  ParameterSet<double> ps;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    auto t = random_tensor(shapes[i], rng, input_scale);
    for (auto& v : t.values()) v += offset;
    ps.add("in" + std::to_string(i), std::move(t));
  }
  Tensor<double> weights;
  bool have_weights = false;
  auto loss = [&](Tape<double>& tape) {
    std::vector<Var<double>> in;
    for (std::size_t i = 0; i < ps.size(); ++i) in.push_back(tape.param(i));
    Var<double> y = op(tape, in);
    if (!have_weights) {
      Rng wr(seed ^ 0x9e3779b97f4a7c15ULL);
      weights = random_tensor(y.shape(), wr);
      have_weights = true;
    }
    return sum(y * tape.constant(weights));
  };
  auto report = grad_check<double>(loss, ps, 1e-6, 1e-4);
  return report.max_rel_error();
}

}  // namespace

TEST_CASE("philox matches the Random123 known-answer vectors", "[rng]") {
  auto a = Rng::philox({0, 0, 0, 0}, {0, 0});
  CHECK(a == Rng::Block{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  auto b = Rng::philox({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff});
  CHECK(b == Rng::Block{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  auto c = Rng::philox({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0});
  CHECK(c == Rng::Block{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("named streams are reproducible and independent", "[rng]") {
  Rng a = Rng::named(7, "init"), b = Rng::named(7, "init"), c = Rng::named(7, "shuffle");
  for (int i = 0; i < 100; ++i) {
    auto x = a.normal();
    CHECK(x == b.normal());
    (void)c;
  }
  CHECK(Rng::named(7, "init")() != Rng::named(7, "shuffle")());
  Rng t(3);
  for (int i = 0; i < 10000; ++i) {
    double z = t.truncated_normal(0.0, 0.02);
    REQUIRE(std::abs(z) <= 0.04);
  }
}

TEST_CASE("matmul examples", "[numeric-core][matmul]") {
  Tape<double> tape;
  Rng rng(1);
  auto m = random_tensor({3, 3}, rng);
  Tensor<double> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1;
  auto y = matmul(tape.constant(eye), tape.constant(m));
  CHECK(y.value() == m);

  auto a = Tensor<double>::matrix({{1, 2}, {3, 4}});
  auto b = Tensor<double>::matrix({{0}, {1}});
  auto p = matmul(tape.constant(a), tape.constant(b));
  CHECK(p.shape() == Shape{2, 1});
  CHECK(p.value()[0] == 2);
  CHECK(p.value()[1] == 4);

  CHECK_THROWS_AS(matmul(tape.constant(a), tape.constant(m)), DimensionError);
  try {
    matmul(tape.constant(a), tape.constant(m));
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,2]") != std::string::npos);
    CHECK(msg.find("[3,3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient of sum equals ones * b^T", "[numeric-core][matmul]") {
  Rng rng(5);
  ParameterSet<double> ps;
  ps.add("a", random_tensor({5, 4}, rng));
  ps.add("b", random_tensor({4, 3}, rng));
  auto f = [&](Tape<double>& t) { return sum(matmul(t.param(0), t.param(1))); };
  {
    Tape<double> t(&ps);
    t.backward(f(t));
  }
  const auto& b = ps[1].value;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double rowsum = b.at(j, 0) + b.at(j, 1) + b.at(j, 2);
      CHECK(ps[0].grad.at(i, j) == Approx(rowsum).epsilon(1e-12));
    }
  // Finite-difference oracle at step 1e-6.
  auto report = grad_check<double>(f, ps, 1e-6, 1e-4);
  CHECK(report.passed());
}

TEST_CASE("layer_norm examples", "[numeric-core][layer_norm]") {
  Tape<double> tape;
  auto c = layer_norm(tape.constant(Tensor<double>({3}, 5.0)), 1e-5);
  for (double v : c.value().values()) CHECK(v == 0.0);

  auto u = layer_norm(tape.constant(Tensor<double>({2}, {1.0, -1.0})), 1e-300);
  CHECK(u.value()[0] == Approx(1.0).epsilon(1e-12));
  CHECK(u.value()[1] == Approx(-1.0).epsilon(1e-12));

  Rng rng(11);
  auto x = random_tensor({8}, rng, 10.0);
  auto y = layer_norm(tape.constant(x), 1e-5).value();
  double xm = 0, xv = 0;
  for (double e : x.values()) xm += e / 8;
  for (double e : x.values()) xv += (e - xm) * (e - xm) / 8;
  double m = 0, v = 0;
  for (double e : y.values()) m += e;
  m /= 8;
  for (double e : y.values()) v += (e - m) * (e - m);
  v /= 8;
  CHECK(std::abs(m) < 1e-12);
  CHECK(std::abs(v - 1.0) < 1e-6);
  CHECK(v == Approx(xv / (xv + 1e-5)).epsilon(1e-12));
}

TEST_CASE("softmax examples", "[numeric-core][softmax]") {
  Tape<double> tape;
  auto s = softmax(tape.constant(Tensor<double>({3}, 0.0))).value();
  for (double v : s.values()) CHECK(v == Approx(1.0 / 3.0).epsilon(1e-15));

  auto sat = softmax(tape.constant(Tensor<double>({2}, {1000.0, 0.0}))).value();
  CHECK(sat[0] == 1.0);
  CHECK(sat[1] < 1e-300);

  auto r = softmax(tape.constant(Tensor<double>({3}, {1.0, 2.0, 3.0}))).value();
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(r[0] == Approx(std::exp(1.0) / z).epsilon(1e-14));
  CHECK(r[1] == Approx(std::exp(2.0) / z).epsilon(1e-14));
  CHECK(r[2] == Approx(std::exp(3.0) / z).epsilon(1e-14));
  CHECK(r[0] == Approx(0.09003).margin(5e-6));
  CHECK(r[1] == Approx(0.24473).margin(5e-6));
  CHECK(r[2] == Approx(0.66524).margin(5e-6));
}

TEST_CASE("softmax rows are positive and sum to one", "[numeric-core][softmax][property]") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    Tape<double> tape;
    auto x = random_tensor({4, 6, 5}, rng, 20.0);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      auto y = softmax(tape.constant(x), axis).value();
      auto sp = detail::split_at(y.shape(), axis);
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
          double total = 0;
          for (std::size_t k = 0; k < sp.axis; ++k) {
            double v = y[o * sp.axis * sp.inner + k * sp.inner + in];
            REQUIRE(v > 0);
            total += v;
          }
          REQUIRE(std::abs(total - 1.0) < 1e-12);
        }
    }
  }
}

TEST_CASE("softplus, gelu and attention closed forms", "[numeric-core]") {
  Tape<double> tape;
  CHECK(softplus(tape.constant(Tensor<double>::scalar(0.0))).item() ==
        Approx(std::numbers::ln2).epsilon(1e-15));
  auto sp = softplus(tape.constant(Tensor<double>({3}, {-800.0, 0.5, 800.0}))).value();
  for (double v : sp.values()) CHECK(v >= 0);
  CHECK(sp[1] > 0);
  CHECK(sp[2] == 800.0);

  CHECK(gelu(tape.constant(Tensor<double>::scalar(0.0))).item() == 0.0);
  CHECK(gelu(tape.constant(Tensor<double>::scalar(1.0))).item() ==
        Approx(0.5 * (1 + std::erf(1 / std::sqrt(2.0)))).epsilon(1e-14));

  Rng rng(2);
  auto q = random_tensor({3, 1, 8}, rng);
  auto kv = random_tensor({3, 1, 8}, rng);
  auto out = attention(tape.constant(q), tape.constant(kv), tape.constant(kv), 2).value();
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == Approx(kv[i]).epsilon(1e-14));
}

TEST_CASE("attention gradients match finite differences", "[numeric-core][attention]") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    double err = op_gradient_error(
        {{3, 4, 8}, {3, 4, 8}, {3, 4, 8}},
        [](Tape<double>&, std::vector<Var<double>>& in) { return attention(in[0], in[1], in[2], 2); },
        seed);
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("every primitive op passes the finite-difference check over 20 seeds",
          "[numeric-core][property]") {
  using Op = std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>;
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    Op op;
    double scale = 1.0, offset = 0.0;
  };
  std::vector<Case> cases = {
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
      {"layer_norm", {{3, 6}}, [](auto&, auto& in) {
         return layer_norm(in[0], 1e-5); }},
      {"layer_norm.affine", {{3, 6}, {6}, {6}}, [](auto&, auto& in) {
         return layer_norm(in[0], in[1], in[2], 1e-5); }},
      {"softmax.axis0", {{4, 3}}, [](auto&, auto& in) { return softmax(in[0], 0); }},
      {"softmax.last", {{3, 4}}, [](auto&, auto& in) { return softmax(in[0]); }},
      {"attention", {{2, 4, 8}, {2, 4, 8}, {2, 4, 8}},
       [](auto&, auto& in) { return attention(in[0], in[1], in[2], 2); }},
      {"moving_average", {{2, 9}}, [](auto&, auto& in) { return moving_average_last(in[0], 5); }},
  };
  for (const auto& c : cases) {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed)
      worst = std::max(worst, op_gradient_error(c.shapes, c.op, 1000 + seed, c.scale, c.offset));
    INFO(c.name << " worst relative error " << worst);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("backward semantics", "[numeric-core][backward]") {
  ParameterSet<double> ps;
  ps.add("x", Tensor<double>::scalar(3.0));
  ps.add("unused", Tensor<double>({2, 2}, 1.0));
  Tape<double> tape(&ps);
  auto x = tape.param(0);
  tape.param(1);
  auto loss = x * x;
  tape.backward(loss);
  CHECK(ps[0].grad.item() == 6.0);
  for (double g : ps[1].grad.values()) CHECK(g == 0.0);
  CHECK_THROWS_AS(tape.backward(loss), Error);
  tape.reset();
  auto y = tape.param(0);
  tape.backward(y * y * y);
  CHECK(ps[0].grad.item() == 27.0);

  Tape<double> t2(&ps);
  auto v = t2.param(1);
  CHECK_THROWS_AS(t2.backward(v), DimensionError);
}

TEST_CASE("grad_check rejects a non-deterministic loss", "[numeric-core][grad_check]") {
  ParameterSet<double> ps;
  ps.add("x", Tensor<double>::scalar(1.0));
  int calls = 0;
  auto f = [&](Tape<double>& t) { return t.param(0) * static_cast<double>(++calls); };
  CHECK_THROWS_AS(grad_check<double>(f, ps, 1e-6, 1e-4), NumericalError);
}

TEST_CASE("tape replay is bitwise reproducible", "[numeric-core][property]") {
  auto run = [] {
    Rng rng = Rng::named(42, "replay");
    ParameterSet<double> ps;
    ps.add("w", random_tensor({6, 6}, rng));
    ps.add("x", random_tensor({3, 4, 6}, rng));
    Tape<double> tape(&ps);
    auto h = gelu(linear(tape.param(1), tape.param(0)));
    auto a = attention(h, h, h, 3);
    auto loss = mean(square(layer_norm(a, 1e-5)) * softmax(h));
    tape.backward(loss);
    return std::make_pair(loss.item(), ps[0].grad);
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}
