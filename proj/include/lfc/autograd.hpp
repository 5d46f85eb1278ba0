#pragma once

// Reverse-mode differentiation over a recorded operation tape.
//
// Every op appends one node holding its forward value and, when any input
// needs a gradient, a closure that pushes the node's gradient to its inputs.
// Tape::backward() replays the closures in reverse recording order. A tape
// is single-threaded; distinct tapes are independent.

#include <deque>
#include <functional>
#include <span>

#include "lfc/tensor.hpp"

namespace lfc {

class Tape;

class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape& tape() const;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  int dim(int axis) const { return value().dim(axis); }
  bool needs_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Called with the finished gradient of the node; pushes into inputs.
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Value without gradient.
  Var constant(Tensor value);
  // Differentiable leaf; its gradient is read back with grad().
  Var leaf(Tensor value);
  // Leaf bound to a parameter tensor; backward() adds into param.grad() when
  // param.requires_grad(). The tensor must outlive the tape.
  Var parameter(Tensor& param);

  // Records an op result. `fn` is dropped when no input needs a gradient or
  // gradients are disabled.
  Var record(Tensor value, bool needs_grad, BackwardFn fn);

  void backward(Var output);  // output must hold a single element
  void backward(Var output, const Tensor& seed);

  // Gradient of a node after backward(); empty when none reached it.
  std::span<const double> grad(Var v) const;
  // Accumulation target used by backward closures. Empty span when the node
  // does not need a gradient.
  std::span<double> grad_buffer(int id);

  const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool needs_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).needs_grad; }

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Buffer grad;
    bool needs_grad = false;
    BackwardFn backward;
    Tensor* param = nullptr;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
};

}  // namespace lfc
