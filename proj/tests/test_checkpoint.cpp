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

#include <cstring>
#include <filesystem>
#include <sstream>

#include "timegmm/checkpoint.hpp"
#include "timegmm/training.hpp"

using namespace timegmm;

namespace {

RunConfig toy_run() {
  RunConfig c = default_run_config();
  apply_config_text(c, R"(
[synthetic]
kind = "bimodal-ar"
length = 400
[model]
history = 32
horizon = 16
d_model = 16
patch_len = 8
patch_stride = 4
encoder_layers = 1
decoder_layers = 1
components = 2
heads = 2
)");
  return c;
}

Tensor<double> history_batch(std::size_t B, std::size_t V, std::size_t L, std::uint64_t seed) {
  Rng rng = Rng::named(seed, "test/history");
  Tensor<double> x({B, V, L});
  for (auto& v : x.values()) v = rng.normal();
  return x;
}

bool bitwise_equal(const Tensor<double>& a, const Tensor<double>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::string serialize(const Checkpoint& ck) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(ck, os);
  return os.str();
}

Checkpoint parse(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_checkpoint(is);
}

}  // namespace

TEST_CASE("checkpoint round trip reproduces forward outputs bitwise", "[checkpoint]") {
  RunConfig cfg = toy_run();
  auto data = load_dataset(cfg);
  TimeGmm<double> model = build_model<double>(cfg, data.frame);
  // Move away from the initialization so the restore is not trivially equal.
  Rng rng = Rng::named(7, "test/perturb");
  for (auto& p : model.params())
    for (auto& v : p.value.values()) v += 0.05 * rng.normal();

  AdamW<double> opt(model.params(), AdamWConfig{});
  for (auto& p : model.params()) p.grad.fill(0.01);
  opt.step(model.params());

  Checkpoint ck = snapshot(cfg, model, &opt, 3, 0.5);
  const auto path = (std::filesystem::temp_directory_path() / "timegmm_test_roundtrip.ckpt").string();
  save_checkpoint(ck, path);
  Checkpoint back = load_checkpoint(path);
  std::filesystem::remove(path);
  CHECK(back == ck);
  CHECK(back.epoch == 3);
  CHECK(back.validation_score == 0.5);
  CHECK(back.optimizer_steps == 1);
  CHECK(back.config_hash == config_hash(cfg));

  RunConfig cfg_back;
  TimeGmm<double> restored = model_from_checkpoint<double>(back, &cfg_back);
  CHECK(canonical_config(cfg_back) == canonical_config(cfg));

  const auto& d = model.config().dims;
  Tensor<double> x = history_batch(3, d.variables, d.history, 11);
  auto a = model.predict(x);
  auto b = restored.predict(x);
  CHECK(bitwise_equal(a.w, b.w));
  CHECK(bitwise_equal(a.mu, b.mu));
  CHECK(bitwise_equal(a.sigma, b.sigma));

  AdamW<double> opt2(restored.params(), AdamWConfig{});
  restore_model(back, restored, &opt2);
  CHECK(opt2.steps() == 1);
  for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
    CHECK(bitwise_equal(opt.first_moments()[i], opt2.first_moments()[i]));
    CHECK(bitwise_equal(opt.second_moments()[i], opt2.second_moments()[i]));
  }
}

TEST_CASE("serialization is byte-stable", "[checkpoint]") {
  Checkpoint ck;
  ck.config_text = "[model]\nd_model = 4\n";
  ck.config_hash = 0x0123456789abcdefULL;
  ck.arrays.push_back({"param/x", {2, 3}, {1, 2, 3, 4, 5, 6}});
  ck.arrays.push_back({"scalar", {}, {-0.0}});
  const std::string s = serialize(ck);
  CHECK(serialize(parse(s)) == s);
  CHECK(s.substr(0, 8) == "TGMMCKPT");
  // magic 8 + version 4 + hash 8 + len 8 + text + epoch 8 + score 8 + steps 8 + count 8
  std::size_t expect = 8 + 4 + 8 + 8 + ck.config_text.size() + 8 + 8 + 8 + 8;
  expect += 4 + 7 + 4 + 2 * 8 + 6 * 8;
  expect += 4 + 6 + 4 + 0 + 1 * 8;
  CHECK(s.size() == expect);
  Checkpoint back = parse(s);
  CHECK(std::signbit(back.arrays[1].data[0]));
}

TEST_CASE("corrupt checkpoints are rejected", "[checkpoint]") {
  Checkpoint ck;
  ck.config_text = "x";
  ck.arrays.push_back({"a", {3}, {1, 2, 3}});
  const std::string good = serialize(ck);

  SECTION("bad magic") {
    std::string s = good;
    s[0] = 'X';
    CHECK_THROWS_AS(parse(s), DataError);
  }
  SECTION("unsupported version") {
    std::string s = good;
    s[8] = 9;
    CHECK_THROWS_AS(parse(s), DataError);
  }
  SECTION("every truncation") {
    for (std::size_t n = 0; n < good.size(); ++n) CHECK_THROWS_AS(parse(good.substr(0, n)), DataError);
  }
  SECTION("trailing bytes") { CHECK_THROWS_AS(parse(good + "z"), DataError); }
  SECTION("missing file names the path") {
    try {
      load_checkpoint("/nonexistent/dir/model.ckpt");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("/nonexistent/dir/model.ckpt") != std::string::npos);
    }
  }
}

TEST_CASE("restore rejects mismatched shapes and missing arrays", "[checkpoint]") {
  RunConfig cfg = toy_run();
  auto data = load_dataset(cfg);
  TimeGmm<double> model = build_model<double>(cfg, data.frame);
  Checkpoint ck = snapshot<double>(cfg, model, nullptr, 0, 0.0);

  SECTION("missing parameter") {
    Checkpoint bad = ck;
    bad.arrays.erase(bad.arrays.begin());
    CHECK_THROWS_AS(restore_model(bad, model), DataError);
  }
  SECTION("wrong shape names the parameter") {
    Checkpoint bad = ck;
    bad.arrays[0].shape = {bad.arrays[0].data.size(), 1};
    try {
      restore_model(bad, model);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(model.params()[0].id) != std::string::npos);
    }
  }
  SECTION("optimizer state absent") {
    AdamW<double> opt(model.params(), AdamWConfig{});
    CHECK_THROWS_AS(restore_model(ck, model, &opt), DataError);
  }
}
