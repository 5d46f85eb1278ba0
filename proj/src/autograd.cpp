#include "lfc/autograd.hpp"

#include <algorithm>

#include "lfc/errors.hpp"

namespace lfc {

Tape& Var::tape() const {
  if (!tape_) throw StateError("use of an unbound Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(id_); }

bool Var::needs_grad() const { return tape_ && tape_->needs_grad(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Tensor value) { return push(Node{std::move(value), {}, false, {}, nullptr}); }

Var Tape::leaf(Tensor value) { return push(Node{std::move(value), {}, grad_enabled_, {}, nullptr}); }

Var Tape::parameter(Tensor& param) {
  const bool needs = grad_enabled_ && param.requires_grad();
  // The value is copied so later in-place parameter updates cannot alias a
  // forward value that backward closures still read.
  return push(Node{Tensor(param.shape(), param.values()), {}, needs, {}, needs ? &param : nullptr});
}

Var Tape::record(Tensor value, bool needs_grad, BackwardFn fn) {
  const bool needs = grad_enabled_ && needs_grad;
  return push(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}, nullptr});
}

std::span<double> Tape::grad_buffer(int id) {
  Node& n = nodes_.at(static_cast<std::size_t>(id));
  if (!n.needs_grad) return {};
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

std::span<const double> Tape::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id()));
  return n.grad;
}

void Tape::backward(Var output) {
  if (output.value().size() != 1) {
    throw ShapeError("backward without a seed needs a scalar output, got " +
                     to_string(output.shape()));
  }
  backward(output, Tensor({1}, 1.0));
}

void Tape::backward(Var output, const Tensor& seed) {
  if (output.tape_ != this) throw StateError("backward on a Var from another tape");
  Node& out = nodes_.at(static_cast<std::size_t>(output.id()));
  if (!out.needs_grad) throw StateError("backward: output does not depend on any gradient leaf");
  if (backward_done_) throw StateError("backward called twice on the same tape");
  if (seed.size() != out.value.size()) throw ShapeError("backward seed does not match output");
  backward_done_ = true;
  auto g = grad_buffer(output.id());
  std::copy(seed.data().begin(), seed.data().end(), g.begin());

  for (int id = output.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(n.grad);
    if (n.param) {
      auto pg = n.param->grad();
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    }
  }
}

}  // namespace lfc
