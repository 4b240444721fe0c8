#include "paln/eval/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>

#include "paln/error.hpp"
#include "paln/nn/functional.hpp"

namespace paln::eval {
namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> count_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[Ngram(tokens.begin() + std::ptrdiff_t(i), tokens.begin() + std::ptrdiff_t(i + n))];
  return counts;
}

struct BleuStats {
  std::vector<std::size_t> matches;
  std::vector<std::size_t> totals;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;

  explicit BleuStats(std::size_t max_n) : matches(max_n, 0), totals(max_n, 0) {}

  void add(const std::vector<std::string>& cand, const std::vector<std::vector<std::string>>& refs) {
    candidate_length += cand.size();
    // Closest reference length; the shorter one on ties.
    std::size_t best = refs.front().size();
    for (const auto& r : refs) {
      const auto diff = [&](std::size_t len) { return len > cand.size() ? len - cand.size() : cand.size() - len; };
      if (diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) best = r.size();
    }
    reference_length += best;
    for (std::size_t n = 1; n <= matches.size(); ++n) {
      const auto cand_counts = count_ngrams(cand, n);
      std::map<Ngram, std::size_t> max_ref;
      for (const auto& r : refs) {
        for (const auto& [gram, c] : count_ngrams(r, n)) max_ref[gram] = std::max(max_ref[gram], c);
      }
      for (const auto& [gram, c] : cand_counts) {
        totals[n - 1] += c;
        auto it = max_ref.find(gram);
        if (it != max_ref.end()) matches[n - 1] += std::min(c, it->second);
      }
    }
  }

  double score() const {
    double log_precision = 0.0;
    for (std::size_t n = 0; n < matches.size(); ++n) {
      if (matches[n] == 0 || totals[n] == 0) return 0.0;
      log_precision += std::log(double(matches[n]) / double(totals[n]));
    }
    if (candidate_length == 0) return 0.0;
    const double brevity =
        candidate_length > reference_length ? 1.0 : std::exp(1.0 - double(reference_length) / double(candidate_length));
    return 100.0 * brevity * std::exp(log_precision / double(matches.size()));
  }
};

bool is_detached_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

}  // namespace

std::vector<std::string> bleu_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (is_detached_punct(c)) {
      flush();
      out.emplace_back(1, char(c));
    } else if (c == 0xC2 && i + 1 < text.size() &&
               (static_cast<unsigned char>(text[i + 1]) == 0xBF || static_cast<unsigned char>(text[i + 1]) == 0xA1)) {
      // U+00BF and U+00A1.
      flush();
      out.emplace_back(text.substr(i, 2));
      ++i;
    } else {
      current.push_back(c < 0x80 ? char(std::tolower(c)) : char(c));
    }
  }
  flush();
  return out;
}

double bleu(std::span<const std::string> candidates, std::span<const std::vector<std::string>> references,
            std::size_t max_n, BleuMode mode) {
  if (candidates.empty()) throw InvalidInput("bleu: empty corpus");
  if (candidates.size() != references.size()) throw InvalidInput("bleu: candidate/reference count mismatch");
  if (max_n < 1) throw InvalidInput("bleu: max_n must be >= 1");
  std::vector<std::vector<std::string>> refs_tok;
  BleuStats corpus(max_n);
  double sentence_sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (references[i].empty()) throw InvalidInput("bleu: candidate " + std::to_string(i) + " has no references");
    refs_tok.clear();
    for (const auto& r : references[i]) refs_tok.push_back(bleu_tokenize(r));
    const auto cand = bleu_tokenize(candidates[i]);
    if (mode == BleuMode::corpus) {
      corpus.add(cand, refs_tok);
    } else {
      BleuStats single(max_n);
      single.add(cand, refs_tok);
      sentence_sum += single.score();
    }
  }
  return mode == BleuMode::corpus ? corpus.score() : sentence_sum / double(candidates.size());
}

double perplexity(const lm::NextTokenModel& model, std::span<const train::TrainingSequence> sequences) {
  if (sequences.empty()) throw InvalidInput("perplexity: empty set");
  double nll = 0.0;
  double count = 0.0;
  for (const auto& seq : sequences) {
    if (seq.inputs.empty()) continue;
    const auto logits = model.logits_all(seq.inputs);
    for (std::size_t i = 0; i < seq.targets.size(); ++i) {
      if (seq.weights[i] == 0.0) continue;
      const auto row = logits.row(i);
      nll += seq.weights[i] * (nn::log_sum_exp(row) - row[std::size_t(seq.targets[i])]);
      count += seq.weights[i];
    }
  }
  if (count == 0.0) throw InvalidInput("perplexity: no target tokens");
  return std::exp(nll / count);
}

double perplexity(const lm::NextTokenModel& model, const text::Vocabulary& vocab,
                  std::span<const train::DialogPair> pairs) {
  if (pairs.empty()) throw InvalidInput("perplexity: empty set");
  const std::size_t window = model.max_context() == 0 ? std::numeric_limits<std::size_t>::max() - 1 : model.max_context();
  std::vector<train::TrainingSequence> seqs;
  seqs.reserve(pairs.size());
  for (const auto& p : pairs) seqs.push_back(train::make_training_sequence(vocab, p, window));
  return perplexity(model, seqs);
}

}  // namespace paln::eval
