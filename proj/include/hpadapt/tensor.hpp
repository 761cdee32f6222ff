/* Copyright 2026 The hpadapt Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Dense row-major float64 tensors with tape-based reverse-mode autodiff.
//
// Every op whose operands require gradients appends its result node to the
// calling thread's Tape. backward() replays that tape in reverse and then
// consumes it; a later backward() on any node recorded on the consumed tape
// is a StateError.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "hpadapt/errors.hpp"

namespace hpadapt {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // 0 for leaves
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  double* grad_buf() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad.data();
  }
};

inline std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

}  // namespace detail

class Tape {
 public:
  static Tape& current() {
    thread_local Tape tape;
    return tape;
  }

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return entries_.size(); }

  void record(std::shared_ptr<detail::Node> n) {
    n->tape_id = id_;
    entries_.push_back(std::move(n));
  }

  // Drops every recorded node without replaying; nodes already handed out
  // become unreachable for backward().
  void discard() {
    entries_.clear();
    id_ = detail::next_tape_id();
  }

 private:
  Tape() : id_(detail::next_tape_id()) {}
  friend void backward(const Tensor&);

  std::uint64_t id_;
  std::vector<std::shared_ptr<detail::Node>> entries_;
};

namespace detail {
inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables tape recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled()) {
    detail::grad_enabled() = false;
  }
  ~NoGradGuard() { detail::grad_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0),
                  requires_grad);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    const std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false) {
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor: zero extent in " + shape_str(shape));
    }
    if (shape.empty()) throw DimensionError("tensor: empty shape");
    if (numel_of(shape) != data.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape) +
                           " does not match " + std::to_string(data.size()) +
                           " values");
    }
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::span<const double> data() const { return node_->value; }
  double item() const {
    if (numel() != 1) throw InvalidArgument("item: tensor is not a scalar");
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const {
    return node_->value[r * node_->shape.back() + c];
  }

  bool requires_grad() const { return node_->requires_grad; }
  const char* op_name() const { return node_->op; }
  bool is_leaf() const { return node_->tape_id == 0 && !node_->backward; }

  // Gradient buffer; zeros if backward has not reached this tensor.
  std::vector<double> grad() const {
    if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
    return node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }

  // Leaf-only mutation, used by optimizers and initializers.
  std::span<double> mutable_data() {
    if (!is_leaf()) throw StateError("mutable_data: tensor is not a leaf");
    return node_->value;
  }
  std::span<double> mutable_grad() {
    if (!is_leaf()) throw StateError("mutable_grad: tensor is not a leaf");
    return {node_->grad_buf(), numel()};
  }
  void zero_grad() { node_->grad.clear(); }
  void set_requires_grad(bool r) {
    if (!is_leaf()) throw StateError("set_requires_grad: tensor is not a leaf");
    node_->requires_grad = r;
  }

  // Leaf copy sharing nothing with this tensor.
  Tensor detach() const { return Tensor(node_->shape, node_->value, false); }
  Tensor clone_leaf(bool requires_grad) const {
    return Tensor(node_->shape, node_->value, requires_grad);
  }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  // Builds an op result; joins the tape iff recording is enabled and any
  // parent requires a gradient.
  static Tensor make_result(Shape shape, std::vector<double> value,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> bw,
                            const char* op) {
    Tensor out;
    out.node_ = std::make_shared<detail::Node>();
    out.node_->shape = std::move(shape);
    out.node_->value = std::move(value);
    out.node_->op = op;
    bool needs = false;
    if (detail::grad_enabled()) {
      for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
      out.node_->requires_grad = true;
      out.node_->parents.reserve(parents.size());
      for (auto& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward = std::move(bw);
      Tape::current().record(out.node_);
    }
    return out;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Reverse-mode pass from a scalar loss over the current thread's tape.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw InvalidArgument("backward: loss must be scalar, got shape " +
                          shape_str(loss.shape()));
  }
  auto* root = loss.node();
  Tape& tape = Tape::current();
  if (root->tape_id == 0) {
    throw StateError("backward: loss is not on a live tape");
  }
  if (root->tape_id != tape.id()) {
    throw StateError("backward: tape already consumed");
  }
  root->grad_buf()[0] += 1.0;
  auto& entries = tape.entries_;
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    detail::Node& n = **it;
    if (n.backward && !n.grad.empty()) n.backward(n);
  }
  tape.discard();
}

}  // namespace hpadapt
