#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "alm/core/array.hpp"
#include "alm/core/params.hpp"

namespace alm::core {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Array<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape; }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so a
/// reverse sweep over the node list is a reverse topological order. A tape is
/// confined to one thread.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Owned value that never receives a gradient.
  Var<T> constant(Array<T> value) { return push(std::move(value), nullptr, false, nullptr, nullptr); }

  /// Owned value that receives a gradient (used by gradient checks and tests).
  Var<T> leaf(Array<T> value) { return push(std::move(value), nullptr, true, nullptr, nullptr); }

  /// Borrowed trainable parameter; its gradient is added to `p.grad` by backward().
  Var<T> param(Param<T>& p) { return push(Array<T>(), &p.value, true, nullptr, &p); }

  /// Borrowed read-only value (frozen parameters, reference models).
  Var<T> frozen(const Array<T>& value) { return push(Array<T>(), &value, false, nullptr, nullptr); }

  /// Records an op output. `backward` runs only if some input requires a gradient.
  Var<T> record(Array<T> value, std::initializer_list<Var<T>> inputs, std::function<void()> backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || requires_grad(in.id());
    return push(std::move(value), nullptr, needs, needs ? std::move(backward) : nullptr, nullptr);
  }
  Var<T> record(Array<T> value, const std::vector<Var<T>>& inputs, std::function<void()> backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || requires_grad(in.id());
    return push(std::move(value), nullptr, needs, needs ? std::move(backward) : nullptr, nullptr);
  }

  const Array<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.borrowed ? *n.borrowed : n.owned;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Array<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    const Array<T>& v = value(id);
    if (n.grad.size() != v.size() || n.grad.shape != v.shape) n.grad = Array<T>(v.shape);
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  /// Gradient of a leaf after backward(); zeros if the leaf did not influence the loss.
  Array<T> grad_of(const Var<T>& v) {
    if (!has_grad(v.id())) return Array<T>(v.value().shape);
    return nodes_[v.id()].grad;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Propagates d(loss)/d(node) to every node that requires a gradient and
  /// flushes parameter gradients into their stores. Consumes the tape.
  void backward(const Var<T>& loss) {
    if (consumed_) throw InvalidInput("backward() called twice on the same tape");
    if (loss.value().size() != 1) {
      throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    consumed_ = true;
    if (!requires_grad(loss.id())) return;
    grad(loss.id()).data[0] = T(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) {
        n.backward();
        n.backward = nullptr;
      }
      if (n.sink != nullptr) {
        Array<T>& g = n.sink->grad;
        if (g.shape != n.grad.shape || g.size() != n.grad.size()) g = Array<T>(n.grad.shape);
        for (std::size_t k = 0; k < g.size(); ++k) g.data[k] += n.grad.data[k];
      }
    }
  }

 private:
  struct Node {
    Array<T> owned;
    const Array<T>* borrowed = nullptr;
    Array<T> grad;
    bool requires_grad = false;
    std::function<void()> backward;
    Param<T>* sink = nullptr;
  };

  Var<T> push(Array<T> owned, const Array<T>* borrowed, bool needs, std::function<void()> backward,
              Param<T>* sink) {
    Node& n = nodes_.emplace_back();
    n.owned = std::move(owned);
    n.borrowed = borrowed;
    n.requires_grad = needs;
    n.backward = std::move(backward);
    n.sink = sink;
    return Var<T>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace alm::core
