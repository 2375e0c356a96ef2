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

#include <stdexcept>
#include <string>

namespace timegmm {

// Default scalar for training and the CLI. Everything numeric is templated, so
// this only picks what the top-level tools instantiate.
#ifdef TIMEGMM_FLOAT32
using real = float;
#else
using real = double;
#endif

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset input (CSV cells, timestamps, window spans).
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf, divergence, or a broken numerical contract.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or unknown keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace timegmm
