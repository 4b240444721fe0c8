#include "paln/lm/next_token_model.hpp"

#include <algorithm>

#include "paln/error.hpp"

namespace paln::lm {

nn::Tensor NextTokenModel::logits_all(std::span<const TokenId> context) const {
  if (context.empty()) throw InvalidInput("logits_all: empty context");
  nn::Tensor out = nn::Tensor::matrix(context.size(), vocab_size());
  for (std::size_t i = 0; i < context.size(); ++i) {
    const auto row = logits_last(context.first(i + 1));
    std::copy(row.begin(), row.end(), out.row(i).begin());
  }
  return out;
}

std::span<const TokenId> fit_context(const NextTokenModel& model, std::span<const TokenId> context) {
  const std::size_t limit = model.max_context();
  if (limit == 0 || context.size() <= limit) return context;
  return context.last(limit);
}

}  // namespace paln::lm
