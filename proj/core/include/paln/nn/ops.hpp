#pragma once

#include <cstddef>
#include <span>

#include "paln/nn/tape.hpp"

namespace paln::nn {

// Differentiable layer kinds. Matrices are [rows, cols] row-major; a rank-1
// tensor counts as one row.

Var add(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var x, double factor);
/// Sum of every element, as a one-element tensor.
Var sum(Tape& tape, Var x);

/// Gathers rows of `table` ([V, d]) -> [ids.size(), d].
Var embedding(Tape& tape, Var table, std::span<const int> ids);

/// x [n, in] * w [in, out] (+ bias [out]).
Var linear(Tape& tape, Var x, Var w);
Var linear(Tape& tape, Var x, Var w, Var bias);

/// x [n, d] * w^T for w [m, d]; used by the tied output head.
Var matmul_transposed(Tape& tape, Var x, Var w);

Var relu(Tape& tape, Var x);

/// Per-row normalisation with learned gain and bias of width d.
Var layer_norm(Tape& tape, Var x, Var gain, Var bias, double eps = 1e-5);

/// Multi-head scaled dot-product attention with a causal mask. q, k, v are
/// [n, d]; d must be divisible by `heads`.
Var causal_attention(Tape& tape, Var q, Var k, Var v, std::size_t heads);

/// [n, a] ++ [n, b] -> [n, a + b].
Var concat_columns(Tape& tape, Var a, Var b);

/// Selects the last row of a matrix.
Var last_row(Tape& tape, Var x);

/// Weighted softmax cross-entropy against class indices, summed over rows:
/// sum_i w_i * -log softmax(logits_i)[target_i]. Rows with w_i == 0 get an
/// exactly-zero gradient.
Var cross_entropy(Tape& tape, Var logits, std::span<const int> targets, std::span<const double> weights);

/// Softmax cross-entropy against probability rows, summed over rows.
Var soft_cross_entropy(Tape& tape, Var logits, const Tensor& target_probs);

}  // namespace paln::nn
