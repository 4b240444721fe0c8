#include "paln/decode/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "paln/error.hpp"
#include "paln/nn/functional.hpp"
#include "paln/random.hpp"

namespace paln::decode {
namespace {

constexpr double kMasked = -std::numeric_limits<double>::infinity();

/// Indices sorted by descending value, lower index first on ties.
std::vector<std::size_t> rank_desc(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  return order;
}

TokenId draw(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last = i;
    if (u < acc) return TokenId(i);
  }
  return TokenId(last);
}

}  // namespace

void DecodeParams::validate() const {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw InvalidInput("temperature must be >= 0");
  if (max_length < 1) throw InvalidInput("max_length must be >= 1");
  if (candidates < 1) throw InvalidInput("candidates must be >= 1");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidInput("top_p must be in (0, 1]");
  if (beam_width < 1) throw InvalidInput("beam_width must be >= 1");
}

DecodeParams DecodeParams::unfiltered() const {
  DecodeParams p = *this;
  p.top_k = 0;
  p.top_p = 1.0;
  return p;
}

std::vector<double> filter_logits(std::span<const double> logits, std::size_t top_k, double top_p) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const bool use_k = top_k > 0 && top_k < out.size();
  const bool use_p = top_p < 1.0;
  if (!use_k && !use_p) return out;

  const auto order = rank_desc(out);
  std::size_t keep = use_k ? top_k : out.size();
  if (use_p) {
    // Renormalise over the top-k survivors, then take the shortest prefix
    // whose cumulative mass reaches top_p.
    std::vector<double> kept(keep);
    for (std::size_t i = 0; i < keep; ++i) kept[i] = out[order[i]];
    const auto probs = nn::softmax(kept);
    double mass = 0.0;
    std::size_t prefix = 0;
    while (prefix < keep) {
      mass += probs[prefix++];
      if (mass >= top_p) break;
    }
    keep = std::max<std::size_t>(prefix, 1);
  }
  for (std::size_t i = keep; i < order.size(); ++i) out[order[i]] = kMasked;
  return out;
}

GenerationCandidate sample_candidate(const lm::NextTokenModel& model, std::span<const TokenId> prompt,
                                     const DecodeParams& params, std::uint64_t seed) {
  params.validate();
  if (prompt.empty()) throw InvalidInput("sample_candidate: empty prompt");
  Rng rng(seed);
  TokenSeq working(prompt.begin(), prompt.end());
  GenerationCandidate out;
  for (std::size_t step = 0; step < params.max_length; ++step) {
    auto logits = model.logits_last(lm::fit_context(model, working));
    TokenId token;
    if (params.temperature == 0.0) {
      token = TokenId(nn::argmax(logits));
    } else {
      for (auto& z : logits) z /= params.temperature;
      const auto filtered = filter_logits(logits, params.top_k, params.top_p);
      token = draw(nn::softmax(filtered), rng);
    }
    out.tokens.push_back(token);
    if (token == model.eos()) {
      out.terminated = true;
      break;
    }
    working.push_back(token);
  }
  return out;
}

RewardDecodeResult decode_with_rewards(const lm::NextTokenModel& model, const text::Vocabulary& vocab,
                                       const CandidateScorer& scorer, std::span<const TokenId> prompt,
                                       const DecodeParams& params) {
  params.validate();
  RewardDecodeResult result;
  result.candidates.reserve(params.candidates);
  for (std::size_t i = 0; i < params.candidates; ++i) {
    result.candidates.push_back(sample_candidate(model, prompt, params, params.seed + i));
  }
  double best = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t i = 0; i < result.candidates.size(); ++i) {
    auto& c = result.candidates[i];
    c.score = scorer.score(prompt, c.tokens);
    if (!found || *c.score > best) {
      best = *c.score;
      result.chosen = i;
      found = true;
    }
  }
  if (!found || result.candidates[result.chosen].tokens.empty()) {
    throw UsageError("decode_with_rewards: no usable candidate");
  }
  result.text = vocab.decode(result.candidates[result.chosen].tokens);
  return result;
}

BeamResult beam_search(const lm::NextTokenModel& model, std::span<const TokenId> prompt, std::size_t beam_width,
                       std::size_t max_length) {
  if (beam_width < 1) throw InvalidInput("beam_search: beam width must be >= 1");
  if (max_length < 1) throw InvalidInput("beam_search: max_length must be >= 1");
  if (prompt.empty()) throw InvalidInput("beam_search: empty prompt");

  auto better = [](const BeamResult& a, const BeamResult& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
  };

  std::vector<BeamResult> beams{BeamResult{}};
  TokenSeq context;
  for (std::size_t step = 0; step < max_length; ++step) {
    std::vector<BeamResult> pool;
    for (const auto& beam : beams) {
      if (beam.terminated) {
        pool.push_back(beam);
        continue;
      }
      context.assign(prompt.begin(), prompt.end());
      context.insert(context.end(), beam.tokens.begin(), beam.tokens.end());
      const auto log_probs = nn::log_softmax(model.logits_last(lm::fit_context(model, context)));
      for (std::size_t v = 0; v < log_probs.size(); ++v) {
        BeamResult next = beam;
        next.tokens.push_back(TokenId(v));
        next.log_prob += log_probs[v];
        next.terminated = TokenId(v) == model.eos();
        pool.push_back(std::move(next));
      }
    }
    const std::size_t keep = std::min(beam_width, pool.size());
    std::partial_sort(pool.begin(), pool.begin() + std::ptrdiff_t(keep), pool.end(), better);
    pool.resize(keep);
    beams = std::move(pool);
    if (std::all_of(beams.begin(), beams.end(), [](const BeamResult& b) { return b.terminated; })) break;
  }
  // beams is sorted best-first.
  for (const auto& b : beams) {
    if (b.terminated) return b;
  }
  return beams.front();
}

}  // namespace paln::decode
