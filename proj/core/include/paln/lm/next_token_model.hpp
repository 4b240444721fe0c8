#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "paln/nn/tensor.hpp"
#include "paln/text/vocabulary.hpp"

namespace paln::lm {

using text::TokenId;

/// Anything that yields next-token logits for a context. Decoding and
/// evaluation are written against this so hand-built models can stand in
/// for the transformer in tests.
class NextTokenModel {
 public:
  virtual ~NextTokenModel() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual TokenId eos() const = 0;
  /// Longest context the model accepts; 0 means unbounded.
  virtual std::size_t max_context() const { return 0; }

  /// Logits for the token following `context` (non-empty).
  virtual std::vector<double> logits_last(std::span<const TokenId> context) const = 0;

  /// Row i holds the logits following context[0..i]. The default calls
  /// logits_last once per prefix.
  virtual nn::Tensor logits_all(std::span<const TokenId> context) const;
};

/// Drops tokens from the front until at most model.max_context() remain.
std::span<const TokenId> fit_context(const NextTokenModel& model, std::span<const TokenId> context);

}  // namespace paln::lm
