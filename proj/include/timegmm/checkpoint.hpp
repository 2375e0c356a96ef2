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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "timegmm/error.hpp"
#include "timegmm/model.hpp"
#include "timegmm/optim.hpp"

namespace timegmm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'T', 'G', 'M', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

/// On-disk layout is documented in docs/checkpoint-format.md.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  std::string config_text;
  std::uint64_t epoch = 0;
  double validation_score = 0;
  std::uint64_t optimizer_steps = 0;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
  const NamedArray& get(const std::string& name) const {
    if (auto* a = find(name)) return *a;
    throw DataError("checkpoint has no array '" + name + "'");
  }
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

template <class U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class U>
U take(std::istream& is, const std::string& what) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("checkpoint truncated while reading " + what);
  return v;
}

inline std::string take_string(std::istream& is, std::uint64_t n, const std::string& what) {
  if (n > (std::uint64_t(1) << 32)) throw DataError("checkpoint: implausible length for " + what);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), std::streamsize(n))) throw DataError("checkpoint truncated while reading " + what);
  return s;
}

}  // namespace detail

inline void write_checkpoint(const Checkpoint& ck, std::ostream& os) {
  os.write(kCheckpointMagic, 8);
  detail::put<std::uint32_t>(os, ck.version);
  detail::put<std::uint64_t>(os, ck.config_hash);
  detail::put<std::uint64_t>(os, ck.config_text.size());
  os.write(ck.config_text.data(), std::streamsize(ck.config_text.size()));
  detail::put<std::uint64_t>(os, ck.epoch);
  detail::put<double>(os, ck.validation_score);
  detail::put<std::uint64_t>(os, ck.optimizer_steps);
  detail::put<std::uint64_t>(os, ck.arrays.size());
  for (const auto& a : ck.arrays) {
    if (numel(a.shape) != a.data.size()) throw Error("checkpoint array '" + a.name + "' has inconsistent size");
    detail::put<std::uint32_t>(os, std::uint32_t(a.name.size()));
    os.write(a.name.data(), std::streamsize(a.name.size()));
    detail::put<std::uint32_t>(os, std::uint32_t(a.shape.size()));
    for (auto e : a.shape) detail::put<std::uint64_t>(os, e);
    os.write(reinterpret_cast<const char*>(a.data.data()), std::streamsize(a.data.size() * sizeof(double)));
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("not a TimeGMM checkpoint (bad magic)");
  Checkpoint ck;
  ck.version = detail::take<std::uint32_t>(is, "version");
  if (ck.version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(ck.version));
  ck.config_hash = detail::take<std::uint64_t>(is, "config hash");
  ck.config_text = detail::take_string(is, detail::take<std::uint64_t>(is, "config length"), "config text");
  ck.epoch = detail::take<std::uint64_t>(is, "epoch");
  ck.validation_score = detail::take<double>(is, "validation score");
  ck.optimizer_steps = detail::take<std::uint64_t>(is, "optimizer steps");
  const auto count = detail::take<std::uint64_t>(is, "array count");
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = detail::take_string(is, detail::take<std::uint32_t>(is, "name length"), "array name");
    const auto rank = detail::take<std::uint32_t>(is, "rank of " + a.name);
    if (rank > 16) throw DataError("checkpoint: implausible rank for '" + a.name + "'");
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(detail::take<std::uint64_t>(is, "extent"));
    const std::size_t n = numel(a.shape);
    if (n > (std::size_t(1) << 34)) throw DataError("checkpoint: implausible size for '" + a.name + "'");
    a.data.resize(n);
    if (n && !is.read(reinterpret_cast<char*>(a.data.data()), std::streamsize(n * sizeof(double))))
      throw DataError("checkpoint truncated in array '" + a.name + "'");
    ck.arrays.push_back(std::move(a));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint has trailing bytes");
  return ck;
}

/// Writes via a temporary file and rename so a crash never leaves a torn file.
inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint '" + path + "'");
    write_checkpoint(ck, os);
    if (!os) throw DataError("failed writing checkpoint '" + path + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path + "'");
  try {
    return read_checkpoint(is);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Model and optimizer state <-> arrays.

template <class T>
NamedArray to_array(std::string name, const Tensor<T>& t) {
  NamedArray a{std::move(name), t.shape(), {}};
  a.data.assign(t.values().begin(), t.values().end());
  return a;
}

template <class T>
Tensor<T> from_array(const NamedArray& a) {
  std::vector<T> v(a.data.begin(), a.data.end());
  return Tensor<T>(a.shape, std::move(v));
}

template <class T>
void store_model(Checkpoint& ck, const TimeGmm<T>& model, const AdamW<T>* opt = nullptr) {
  for (const auto& p : model.params()) ck.arrays.push_back(to_array("param/" + p.id, p.value));
  ck.arrays.push_back(to_array("data/mean", model.dataset_stats().mean));
  ck.arrays.push_back(to_array("data/stddev", model.dataset_stats().stddev));
  if (opt && opt->first_moments().size() == model.params().size()) {
    ck.optimizer_steps = opt->steps();
    std::size_t i = 0;
    for (const auto& p : model.params()) {
      ck.arrays.push_back(to_array("adam.m/" + p.id, opt->first_moments()[i]));
      ck.arrays.push_back(to_array("adam.v/" + p.id, opt->second_moments()[i]));
      ++i;
    }
  }
}

/// Loads parameter values (and optimizer moments when `opt` is given) into a
/// model already built from the checkpoint's configuration.
template <class T>
void restore_model(const Checkpoint& ck, TimeGmm<T>& model, AdamW<T>* opt = nullptr) {
  for (auto& p : model.params()) {
    const NamedArray& a = ck.get("param/" + p.id);
    if (a.shape != p.value.shape())
      throw DataError("checkpoint parameter '" + p.id + "' has shape " + shape_str(a.shape) + ", model expects " +
                      shape_str(p.value.shape()));
    p.value = from_array<T>(a);
  }
  model.set_dataset_stats({from_array<T>(ck.get("data/mean")), from_array<T>(ck.get("data/stddev"))});
  if (opt) {
    std::vector<Tensor<T>> m, v;
    for (const auto& p : model.params()) {
      m.push_back(from_array<T>(ck.get("adam.m/" + p.id)));
      v.push_back(from_array<T>(ck.get("adam.v/" + p.id)));
    }
    opt->restore(ck.optimizer_steps, std::move(m), std::move(v));
  }
}

}  // namespace timegmm
