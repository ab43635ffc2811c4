// Copyright 2026 The histoclean Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "histoclean/tensor.hpp"

namespace histoclean {

/// Reverse-mode autodiff node. Graphs are built eagerly by the ops in
/// ops.hpp and released when the last Var referencing them goes away.
struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node& self)> backward_fn;

  /// Gradient buffer, zero-initialised on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  /// Leaf that never receives gradients.
  static Var constant(Tensor value);
  /// Leaf that accumulates gradients (a trainable parameter).
  static Var parameter(Tensor value);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Tensor& grad() { return node_->grad_buffer(); }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad = Tensor(); }

  /// Same value, cut from the graph.
  Var detach() const { return constant(node_->value); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph construction on this thread while alive (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Creates the output node of an op. When no input requires gradients the
/// backward closure and parent links are dropped, so inference builds no graph.
Var make_result(Tensor value, std::vector<Var> inputs,
                std::function<void(Node& self)> backward_fn);

/// Back-propagates from a scalar root (seed gradient 1). Intermediate
/// gradients are released as soon as they have been propagated.
void backward(const Var& root);

/// Accumulates `g` into `v`'s gradient if `v` requires it.
void accumulate_grad(Node* v, const Tensor& g);

}  // namespace histoclean
