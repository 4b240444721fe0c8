#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "paln/lm/next_token_model.hpp"
#include "paln/text/vocabulary.hpp"

namespace paln::decode {

using text::TokenId;
using text::TokenSeq;

/// Generation knobs; defaults are the comparison settings used for the
/// decoder study (T=1, L=200, N=10, top-k 20, top-p 0.9, beam 6).
struct DecodeParams {
  double temperature = 1.0;       ///< > 0; exactly 0 selects greedy argmax
  std::size_t max_length = 200;   ///< L >= 1
  std::size_t candidates = 10;    ///< N >= 1
  std::size_t top_k = 20;         ///< 0 disables
  double top_p = 0.9;             ///< in (0, 1]; 1 disables
  std::size_t beam_width = 6;     ///< b >= 1
  std::uint64_t seed = 0;

  void validate() const;
  /// Plain temperature sampling: same params with filtering switched off.
  DecodeParams unfiltered() const;
};

struct GenerationCandidate {
  TokenSeq tokens;
  std::optional<double> score;
  bool terminated = false;  ///< last token is EOS
};

/// Masks (sets to -inf) entries outside the top-k, then outside the smallest
/// descending-probability prefix of the survivors whose mass reaches top_p.
/// Ties in value keep the lower index first. At least one entry survives.
std::vector<double> filter_logits(std::span<const double> logits, std::size_t top_k, double top_p);

/// Draws one response: logits / T, filter, softmax, multinomial; stops after
/// EOS or L tokens. The prompt is copied; when prompt + generated text no
/// longer fits the model window the oldest tokens are dropped.
GenerationCandidate sample_candidate(const lm::NextTokenModel& model, std::span<const TokenId> prompt,
                                     const DecodeParams& params, std::uint64_t seed);

/// Scores a candidate continuation of a prompt; higher is better.
class CandidateScorer {
 public:
  virtual ~CandidateScorer() = default;
  virtual double score(std::span<const TokenId> prompt, std::span<const TokenId> candidate) const = 0;
};

struct RewardDecodeResult {
  std::string text;
  std::size_t chosen = 0;
  std::vector<GenerationCandidate> candidates;  ///< all N, each with its score
};

/// Reward-guided decoding: N candidates, each sampled from the original
/// prompt with seed params.seed + i, scored against the original prompt;
/// returns the decoded argmax (lowest index on ties).
RewardDecodeResult decode_with_rewards(const lm::NextTokenModel& model, const text::Vocabulary& vocab,
                                       const CandidateScorer& scorer, std::span<const TokenId> prompt,
                                       const DecodeParams& params);

struct BeamResult {
  TokenSeq tokens;
  double log_prob = 0.0;
  bool terminated = false;
};

/// Length-unnormalised beam search. EOS-terminated beams are frozen and keep
/// competing on total log-probability; ranking ties go to the
/// lexicographically smaller token sequence. Returns the best terminated
/// beam, or the best unterminated one if none terminated within L steps.
BeamResult beam_search(const lm::NextTokenModel& model, std::span<const TokenId> prompt, std::size_t beam_width,
                       std::size_t max_length);

}  // namespace paln::decode
