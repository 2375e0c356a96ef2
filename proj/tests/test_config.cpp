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

#include <filesystem>
#include <fstream>

#include "timegmm/config.hpp"

using namespace timegmm;

namespace {

std::string error_of(const std::string& text) {
  RunConfig c = default_run_config();
  try {
    apply_config_text(c, text, "cfg.toml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& s, const std::string& needle) { return s.find(needle) != std::string::npos; }

}  // namespace

TEST_CASE("config file sets typed fields", "[config]") {
  RunConfig c = default_run_config();
  apply_config_text(c, R"(
# comment line
[data]
source = "csv"
path = "data/a#b.csv"   # hash inside quotes is kept
[synthetic]
kind = "regime-shift"
noise_locs = [-2, 0.5, 3]
schedule = "0:0:1, 500:3:2"
[model]
d_model = 64
components = 4
[decoder]
residual = true
[training]
lr = 1e-3
no_gmm = true
[run]
seeds = [1, 2, 3]
horizons = [96, 192]
output_dir = "runs/x"
)");
  CHECK(c.data.source == "csv");
  CHECK(c.data.path == "data/a#b.csv");
  CHECK(c.synthetic.kind == SyntheticKind::regime_shift);
  CHECK(c.synthetic.noise_locs == std::vector<double>{-2, 0.5, 3});
  REQUIRE(c.synthetic.schedule.size() == 2);
  CHECK(c.synthetic.schedule[1].start == 500);
  CHECK(c.synthetic.schedule[1].level == 3);
  CHECK(c.synthetic.schedule[1].scale == 2);
  CHECK(c.model.dims.d_model == 64);
  CHECK(c.model.dims.components == 4);
  CHECK(c.model.decoder_residual);
  CHECK(c.training.adam.lr == 1e-3);
  CHECK(c.training.no_gmm);
  CHECK(c.seeds == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(c.horizons == std::vector<std::size_t>{96, 192});
  CHECK(c.output_dir == "runs/x");
  CHECK(c.effective_model(3).dims.components == 1);
}

TEST_CASE("strict parsing rejects malformed input with a location", "[config]") {
  CHECK(contains(error_of("[model]\nd_modle = 3\n"), "cfg.toml:2"));
  CHECK(contains(error_of("[model]\nd_modle = 3\n"), "unknown key 'd_modle'"));
  CHECK(contains(error_of("[modle]\nd_model = 3\n"), "unknown section [modle]"));
  CHECK(contains(error_of("[model]\nd_model = 3\nd_model = 4\n"), "duplicate key"));
  CHECK(contains(error_of("d_model = 3\n"), "outside of any [section]"));
  CHECK(contains(error_of("[model]\nd_model\n"), "expected key = value"));
  CHECK(contains(error_of("[model\n"), "malformed section header"));
  CHECK(contains(error_of("[model]\nd_model = -3\n"), "non-negative integer"));
  CHECK(contains(error_of("[model]\nd_model = 3.5\n"), "non-negative integer"));
  CHECK(contains(error_of("[training]\nlr = fast\n"), "finite number"));
  CHECK(contains(error_of("[training]\nlr = nan\n"), "finite number"));
  CHECK(contains(error_of("[training]\nlr = \"0.5\"\n"), "finite number"));
  CHECK(contains(error_of("[training]\nno_gmm = yes\n"), "true or false"));
  CHECK(contains(error_of("[data]\npath = data.csv\n"), "quoted string"));
  CHECK(contains(error_of("[synthetic]\nkind = \"spiral\"\n"), "spiral"));
  CHECK(contains(error_of("[run]\nseeds = 1, 2\n"), "[list]"));
  CHECK(error_of("[model]\n  d_model   =   8   \n\n# end\n").empty());
}

TEST_CASE("overrides apply on top of file values", "[config]") {
  RunConfig c = default_run_config();
  apply_config_text(c, "[model]\nd_model = 64\n");
  apply_override(c, "model.d_model=32");
  apply_override(c, "training.lr = 0.5");
  CHECK(c.model.dims.d_model == 32);
  CHECK(c.training.adam.lr == 0.5);
  CHECK_THROWS_AS(apply_override(c, "d_model=32"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "model.d_model"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "model.nope=1"), ConfigError);
}

TEST_CASE("canonical text round-trips every field", "[config]") {
  RunConfig c = default_run_config();
  apply_config_text(c, R"(
[data]
name = "q\"uote"
[synthetic]
kind = "sine-mixture"
ar = 0.1
periods = [24, 168]
amplitudes = [1, 0.25]
schedule = "0:0:1, 100:2.5:0.5"
[model]
init_std = 0.03
[grin]
eps = 1e-7
[training]
lr = 0.00012345678901234567
max_seconds = 12.5
[run]
seeds = [4, 5]
)");
  const std::string text = canonical_config(c);
  RunConfig back = default_run_config();
  apply_config_text(back, text, "canonical");
  CHECK(canonical_config(back) == text);
  CHECK(back.training.adam.lr == c.training.adam.lr);
  CHECK(back.data.name == "q\"uote");
  CHECK(config_hash(back) == config_hash(c));

  // The default configuration also round-trips.
  RunConfig d = default_run_config();
  RunConfig d2 = default_run_config();
  apply_config_text(d2, canonical_config(d));
  CHECK(canonical_config(d2) == canonical_config(d));
}

TEST_CASE("config hash ignores run placement but not experiment settings", "[config]") {
  RunConfig a = default_run_config();
  RunConfig b = a;
  b.output_dir = "elsewhere";
  b.seeds = {7, 8};
  b.horizons = {192};
  CHECK(config_hash(a) == config_hash(b));
  b.model.dims.d_model = 8;
  CHECK(config_hash(a) != config_hash(b));
  RunConfig c2 = a;
  c2.training.seed = 2;
  CHECK(config_hash(a) != config_hash(c2));
}

TEST_CASE("config files load from disk", "[config]") {
  const auto path = (std::filesystem::temp_directory_path() / "timegmm_test_cfg.toml").string();
  {
    std::ofstream os(path);
    os << "[training]\nbatch_size = 16\nbogus = 1\n";
  }
  try {
    load_run_config(path);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(contains(e.what(), path + ":3"));
  }
  {
    std::ofstream os(path);
    os << "[training]\nbatch_size = 16\n";
  }
  CHECK(load_run_config(path).training.batch_size == 16);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_run_config(path), ConfigError);
}

TEST_CASE("training and model settings are validated", "[config]") {
  RunConfig c = default_run_config();
  c.training.patience = 0;
  CHECK_THROWS_AS(c.training.validate(), ConfigError);
  c = default_run_config();
  c.training.loss.weight = -1;
  CHECK_THROWS_AS(c.training.validate(), ConfigError);
  c = default_run_config();
  c.model.dims.variables = 2;
  CHECK_THROWS_AS(c.effective_model(3), ConfigError);
  c = default_run_config();
  c.model.dims.d_model = 30;  // not divisible by 4 heads
  CHECK_THROWS_AS(c.effective_model(1), ConfigError);
  c = default_run_config();
  c.training.no_grin = true;
  CHECK_FALSE(c.effective_model(1).use_grin);
}

TEST_CASE("command-line overrides accept bare strings", "[config]") {
  RunConfig c = default_run_config();
  apply_override(c, "synthetic.kind=regime-shift");
  CHECK(c.synthetic.kind == SyntheticKind::regime_shift);
  apply_override(c, "data.name = \"quoted\"");
  CHECK(c.data.name == "quoted");
  RunConfig f = default_run_config();
  CHECK_THROWS_AS(apply_config_text(f, "[data]\nname = bare\n"), ConfigError);
}

TEST_CASE("shipped configs load and validate", "[config]") {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(std::filesystem::path(TIMEGMM_SOURCE_DIR) / "configs")) {
    if (e.path().extension() != ".toml") continue;
    INFO(e.path().string());
    RunConfig c;
    REQUIRE_NOTHROW(c = load_run_config(e.path().string()));
    CHECK_NOTHROW(c.training.validate());
    CHECK_NOTHROW(c.effective_model(c.synthetic.variables).validate());
    ++n;
  }
  CHECK(n >= 4);
}
