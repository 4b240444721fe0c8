#include "paln/nn/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "paln/error.hpp"

namespace paln::nn {

std::size_t shape_size(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw InvalidInput("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_string(shape_));
  }
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.size() < 2) return 1;
  return data_.size() / shape_.back();
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.empty()) return data_.size();
  return shape_.back();
}

void Tensor::enable_grad() {
  if (!grad_) grad_.emplace(data_.size(), 0.0);
}

std::span<double> Tensor::grad() {
  if (!grad_) throw UsageError("tensor has no gradient buffer");
  return *grad_;
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw UsageError("tensor has no gradient buffer");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Parameter make_parameter(std::string name, ParamKind kind, Shape shape, double fill) {
  Parameter p{std::move(name), kind, Tensor(std::move(shape), fill)};
  p.value.enable_grad();
  return p;
}

void zero_grads(std::span<Parameter> params) {
  for (auto& p : params) p.value.zero_grad();
}

}  // namespace paln::nn
