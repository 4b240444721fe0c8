#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "paln/lm/next_token_model.hpp"
#include "paln/train/dataset.hpp"
#include "paln/train/finetune.hpp"

namespace paln::eval {

/// Lowercases ASCII letters, splits on whitespace and detaches ASCII
/// punctuation (and the Spanish marks ¿ ¡) into their own tokens.
std::vector<std::string> bleu_tokenize(std::string_view text);

enum class BleuMode {
  corpus,         ///< pooled n-gram statistics over the corpus
  sentence_mean,  ///< mean of per-sentence scores
};

/// BLEU on a 0-100 scale: geometric mean of clipped n-gram precisions for
/// n = 1..max_n times the brevity penalty (closest reference length, shorter
/// on ties). No smoothing: any zero precision gives 0.
double bleu(std::span<const std::string> candidates, std::span<const std::vector<std::string>> references,
            std::size_t max_n = 4, BleuMode mode = BleuMode::corpus);

/// exp(mean negative log-likelihood) over weighted target positions.
double perplexity(const lm::NextTokenModel& model, std::span<const train::TrainingSequence> sequences);
/// Perplexity of the responses given their contexts (context tokens masked).
double perplexity(const lm::NextTokenModel& model, const text::Vocabulary& vocab,
                  std::span<const train::DialogPair> pairs);

}  // namespace paln::eval
