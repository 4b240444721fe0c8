#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "paln/nn/tensor.hpp"

namespace paln::nn {

/// log(sum(exp(v))) with max subtraction. Returns -inf when every entry is -inf.
double log_sum_exp(std::span<const double> v);

/// Numerically stable softmax. Entries may be -inf (masked) as long as at
/// least one is finite; NaN or +inf inputs and empty vectors are rejected.
std::vector<double> softmax(std::span<const double> v);
std::vector<double> log_softmax(std::span<const double> v);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> v);

/// Correctly rounded sum (Shewchuk partials); independent of input order.
double exact_sum(std::span<const double> values);

/// Noam learning rate: d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).
double noam_lr(long step, long d_model, long warmup);

/// lambda * sum |w| over `weight` parameters (biases and gains excluded).
double l1_penalty(std::span<const Parameter> params, double lambda);

/// Adds lambda * sign(w) to the gradient of every `weight` parameter.
void add_l1_gradient(std::span<Parameter> params, double lambda);

}  // namespace paln::nn
