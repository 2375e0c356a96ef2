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

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string_view>

namespace timegmm {

/// Philox4x32-10 counter-based generator (Salmon et al., Random123).
///
/// The stream is a pure function of (seed, stream id, counter), so any draw
/// can be reproduced without replaying earlier draws. Named streams
/// (`Rng::named(seed, "init")`) keep independent consumers decoupled: adding
/// draws to one never shifts another.
class Rng {
 public:
  using result_type = std::uint32_t;

  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        counter_{0, 0, static_cast<std::uint32_t>(stream),
                 static_cast<std::uint32_t>(stream >> 32)} {}

  static Rng named(std::uint64_t seed, std::string_view name) {
    return Rng(seed, fnv1a(name));
  }

  static constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (lane_ == 4) {
      block_ = philox(counter_, key_);
      increment();
      lane_ = 0;
    }
    return block_[lane_++];
  }

  /// Uniform in the open interval (0, 1) with 53 random bits.
  double uniform() {
    std::uint64_t a = (*this)() >> 5;
    std::uint64_t b = (*this)() >> 6;
    double u = (static_cast<double>(a) * 67108864.0 + static_cast<double>(b)) *
               (1.0 / 9007199254740992.0);
    return u > 0.0 ? u : 0x1p-54;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Normal restricted to [-2 std, 2 std] around the mean by rejection.
  double truncated_normal(double mean, double stddev) {
    for (;;) {
      double z = normal();
      if (std::abs(z) <= 2.0) return mean + stddev * z;
    }
  }

  std::uint64_t below(std::uint64_t n) {
    // Lemire-style rejection-free enough for our n (< 2^32): use 64-bit product.
    std::uint64_t x = (*this)();
    return (x * n) >> 32;
  }

  /// Index drawn with probability proportional to `weights` (must be > 0 in sum).
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  /// One Philox4x32-10 bijection of `c` under `k`.
  static Block philox(Block c, Key k) {
    constexpr std::uint32_t M0 = 0xD2511F53, M1 = 0xCD9E8D57;
    constexpr std::uint32_t W0 = 0x9E3779B9, W1 = 0xBB67AE85;
    for (int round = 0; round < 10; ++round) {
      std::uint64_t p0 = static_cast<std::uint64_t>(M0) * c[0];
      std::uint64_t p1 = static_cast<std::uint64_t>(M1) * c[2];
      Block n{static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0],
              static_cast<std::uint32_t>(p1),
              static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1],
              static_cast<std::uint32_t>(p0)};
      c = n;
      k[0] += W0;
      k[1] += W1;
    }
    return c;
  }

  template <class T>
  std::size_t categorical(std::span<const T> weights) {
    double total = 0;
    for (T w : weights) total += static_cast<double>(w);
    double u = uniform() * total;
    double acc = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      acc += static_cast<double>(weights[k]);
      if (u < acc) return k;
    }
    return weights.size() - 1;
  }

 private:
  void increment() {
    if (++counter_[0] == 0) ++counter_[1];
  }

  Key key_;
  Block counter_;
  Block block_{};
  int lane_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace timegmm
