#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmn/tensor.hpp"

namespace mmn {

template <typename T>
class Tape;

// A named learnable tensor. Gradients live on the tape that consumed it, so a
// model can be shared read-only across concurrent forward passes.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

// Handle to a tensor recorded on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Ordered record of executed operations. Backward visits them in exact
// reverse order. Node storage is a deque so references to recorded values
// stay valid while the tape grows.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), nullptr, false, {}); }

  Var<T> leaf(Tensor<T> value) { return push(std::move(value), nullptr, grad_enabled_, {}); }

  // Parameters are recorded once per tape and read in place.
  Var<T> param(const Parameter<T>& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return Var<T>(this, it->second);
    Var<T> v = push(Tensor<T>(), &p.value, grad_enabled_, {});
    bound_.emplace(&p, v.id());
    return v;
  }

  // Route every later param(p) lookup to an existing node.
  void bind(const Parameter<T>& p, Var<T> v) { bound_[&p] = v.id(); }

  // Index of the node standing in for `p`, if it was used on this tape.
  std::optional<Var<T>> find_param(const Parameter<T>& p) {
    auto it = bound_.find(&p);
    if (it == bound_.end()) return std::nullopt;
    return Var<T>(this, it->second);
  }

  // Records an operation result. The backward closure is dropped when no
  // input requires a gradient.
  Var<T> record(Tensor<T> value, std::span<const std::size_t> inputs, Backward backward, const char* op_name) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op_name);
    bool needs = false;
    for (auto in : inputs) needs = needs || nodes_[in].requires_grad;
    return push(std::move(value), nullptr, needs, needs ? std::move(backward) : Backward{});
  }

  Var<T> record(Tensor<T> value, std::initializer_list<std::size_t> inputs, Backward backward,
                const char* op_name) {
    return record(std::move(value), std::span<const std::size_t>(inputs.begin(), inputs.size()), std::move(backward),
                  op_name);
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  // Gradient accumulator, allocated as zeros on first access.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
    return n.grad;
  }

  const Tensor<T>& grad(Var<T> v) { return grad(v.id()); }

  void backward(Var<T> root) {
    Tensor<T> seed(root.shape(), T(1));
    backward(root, seed);
  }

  void backward(Var<T> root, const Tensor<T>& seed) {
    if (seed.shape() != root.shape()) throw ShapeError("backward seed shape mismatch");
    if (!nodes_[root.id()].requires_grad) return;
    Tensor<T>& g = grad(root.id());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, i);
      if (!n.grad.all_finite()) throw NumericError("non-finite gradient during backward");
    }
  }

  // Marks and rewinds let a decoder loop discard per-step nodes.
  std::size_t mark() const { return nodes_.size(); }
  void rewind(std::size_t mark) {
    while (nodes_.size() > mark) nodes_.pop_back();
    for (auto it = bound_.begin(); it != bound_.end();) {
      it = it->second >= mark ? bound_.erase(it) : std::next(it);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    bool requires_grad = false;
    Tensor<T> grad;
    Backward backward;
  };

  Var<T> push(Tensor<T> value, const Tensor<T>* external, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), external, requires_grad, Tensor<T>(), std::move(backward)});
    return Var<T>(this, nodes_.size() - 1);
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> bound_;
};

}  // namespace mmn
