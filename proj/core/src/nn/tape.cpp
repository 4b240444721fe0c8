#include "paln/nn/tape.hpp"

#include <algorithm>

#include "paln/error.hpp"

namespace paln::nn {

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), nullptr, std::nullopt, nullptr, false, {}});
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(Parameter& param) {
  // The tape must be consumed (backward) before the parameter is updated.
  nodes_.push_back(Node{Tensor{}, &param.value, std::nullopt, &param, record_, {}});
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(const Parameter& param) {
  nodes_.push_back(Node{Tensor{}, &param.value, std::nullopt, nullptr, false, {}});
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw UsageError("variable does not belong to this tape");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const {
  const Node& n = node(v);
  return n.ref ? *n.ref : n.value;
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

const std::optional<Tensor>& Tape::grad(Var v) const { return node(v).grad; }

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  if (record_) {
    for (Var in : inputs) needs = needs || node(in).requires_grad;
  }
  nodes_.push_back(Node{std::move(value), nullptr, std::nullopt, nullptr, needs, needs ? std::move(backward) : Backward{}});
  return Var{nodes_.size() - 1};
}

Tensor& Tape::grad_slot(Var v) {
  auto& n = nodes_.at(v.id);
  if (!n.grad) n.grad.emplace(n.ref ? n.ref->shape() : n.value.shape(), 0.0);
  return *n.grad;
}

void Tape::backward(Var loss) {
  if (!record_) throw UsageError("backward() on a tape recorded without gradients");
  if (nodes_.empty()) throw UsageError("backward() called before any forward pass");
  const Node& root = node(loss);
  if (value(loss).size() != 1) throw UsageError("backward() requires a single-element loss");
  if (!root.requires_grad) throw UsageError("loss does not depend on any parameter");
  if (ran_backward_) {
    for (auto& n : nodes_) n.grad.reset();
  }
  ran_backward_ = true;

  grad_slot(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.grad) continue;
    if (n.backward) {
      // Closures only touch lower-numbered nodes, so the buffer can be lent out.
      Tensor out_grad = std::move(*n.grad);
      n.backward(*this, out_grad);
      nodes_[i].grad = std::move(out_grad);
    }
    if (nodes_[i].param) {
      auto dst = nodes_[i].param->value.grad();
      const auto src = nodes_[i].grad->data();
      std::transform(dst.begin(), dst.end(), src.begin(), dst.begin(), std::plus<>{});
    }
  }
}

}  // namespace paln::nn
