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

#include <functional>
#include <iostream>
#include <string>
#include <utility>

namespace timegmm {

/// Process-wide sink for non-fatal diagnostics (empty windows, fallbacks).
class Log {
 public:
  using Sink = std::function<void(const std::string&)>;

  static void warn(const std::string& msg) { sink()("warning: " + msg); }
  static void info(const std::string& msg) { sink()(msg); }

  /// Replaces the sink; returns the previous one.
  static Sink set_sink(Sink s) { return std::exchange(sink(), std::move(s)); }

 private:
  static Sink& sink() {
    static Sink s = [](const std::string& m) { std::cerr << m << '\n'; };
    return s;
  }
};

}  // namespace timegmm
