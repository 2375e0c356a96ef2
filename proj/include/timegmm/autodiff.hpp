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

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "timegmm/error.hpp"
#include "timegmm/tensor.hpp"

namespace timegmm {

/// A named learnable array. `grad` always has the shape of `value`.
template <class T>
struct Parameter {
  std::string id;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Ordered registry of parameters. Registration order is stable and is the
/// order used by the optimizer and by checkpoints.
template <class T>
class ParameterSet {
 public:
  std::size_t add(std::string id, Tensor<T> init) {
    if (index_.count(id)) throw ConfigError("duplicate parameter id '" + id + "'");
    Tensor<T> g(init.shape());
    index_.emplace(id, params_.size());
    params_.push_back(Parameter<T>{std::move(id), std::move(init), std::move(g)});
    return params_.size() - 1;
  }

  Parameter<T>& operator[](std::size_t i) { return params_.at(i); }
  const Parameter<T>& operator[](std::size_t i) const { return params_.at(i); }

  std::size_t index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ConfigError("unknown parameter id '" + id + "'");
    return it->second;
  }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T(0));
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  template <class U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& p : params_) out.add(p.id, p.value.template cast<U>());
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <class T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
  std::size_t extent(std::size_t axis) const { return shape().at(axis); }
  std::size_t rank() const { return shape().size(); }
  T item() const { return value().item(); }
};

/// Linear record of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid topological order and backward() visits each node once. Nodes that
/// do not depend on a gradient-carrying leaf record no backward closure.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(ParameterSet<T>* params = nullptr, bool grad_enabled = true)
      : params_(params), grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }

  /// Leaf that receives a gradient (used for input-gradient checks).
  Var<T> variable(Tensor<T> v) { return push(std::move(v), grad_enabled_, nullptr); }

  /// Leaf bound to parameter `index` of the attached set; one node per parameter.
  Var<T> param(std::size_t index) {
    if (!params_) throw Error("tape has no parameter set attached");
    if (auto it = param_nodes_.find(index); it != param_nodes_.end())
      return Var<T>{this, it->second};
    Var<T> v = push((*params_)[index].value, grad_enabled_, nullptr);
    param_nodes_.emplace(index, v.id);
    return v;
  }

  /// Appends an op result. The closure runs during backward() only when some
  /// input requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_)
      for (const auto& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  void backward(Var<T> loss) {
    if (backward_done_)
      throw Error("backward() already ran on this tape; call reset() first");
    if (loss.tape != this) throw Error("loss does not belong to this tape");
    if (value(loss.id).size() != 1)
      throw DimensionError("backward() needs a scalar loss, got shape " +
                           shape_str(value(loss.id).shape()));
    backward_done_ = true;
    if (params_) params_->zero_grad();
    if (!nodes_[loss.id].requires_grad) return;
    grad_ref(loss.id).fill(T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, i);
    }
    if (params_)
      for (auto [index, node] : param_nodes_) {
        const auto& g = nodes_[node].grad;
        if (g.size() == 0) continue;
        auto& dst = (*params_)[index].grad;
        for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
      }
  }

  void reset() {
    nodes_.clear();
    param_nodes_.clear();
    backward_done_ = false;
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  ParameterSet<T>* parameters() const noexcept { return params_; }

  /// Gradient buffer of node `id`, allocated as zeros on first use.
  Tensor<T>& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  /// Gradient of the last backward() w.r.t. `v` (zeros if unreached).
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.size() ? n.grad : Tensor<T>(n.value.shape());
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> v, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(v), Tensor<T>{}, requires_grad, std::move(fn)});
    return Var<T>{this, nodes_.size() - 1};
  }

  // deque: references to earlier node values survive later pushes.
  std::deque<Node> nodes_;
  std::map<std::size_t, std::size_t> param_nodes_;
  ParameterSet<T>* params_;
  bool grad_enabled_;
  bool backward_done_ = false;
};

}  // namespace timegmm
