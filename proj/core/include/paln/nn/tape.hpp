#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "paln/nn/tensor.hpp"

namespace paln::nn {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape over the fixed layer set in ops.hpp.
///
/// Each op pushes its output plus a closure that maps the output gradient to
/// input gradients. backward() walks the nodes in reverse insertion order and
/// finally adds leaf gradients into the bound Parameter buffers. A tape built
/// with record=false keeps only values (inference).
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool record = true) : record_(record) {}

  Var constant(Tensor value);
  /// Binds a parameter by reference; its gradient receives the backward pass.
  Var parameter(Parameter& param);
  /// Binds a parameter by reference as a constant (no gradient).
  Var parameter(const Parameter& param);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() pass for a node, if one reached it.
  const std::optional<Tensor>& grad(Var v) const;

  /// Runs the reverse pass from a single-element loss node. Parameter
  /// gradients are accumulated (+=), not overwritten.
  void backward(Var loss);

  // Op-author interface.
  Var push(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Tensor& grad_slot(Var v);

 private:
  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;
    std::optional<Tensor> grad;
    Parameter* param = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool record_;
  bool ran_backward_ = false;
};

}  // namespace paln::nn
