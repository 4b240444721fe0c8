#include "paln/text/vocabulary.hpp"

#include <charconv>
#include <limits>
#include <sstream>
#include <utility>

#include "paln/error.hpp"
#include "paln/nn/checkpoint.hpp"

namespace paln::text {
namespace {

constexpr std::string_view kHeader = "paln-bpe 1";
constexpr std::string_view kSpecialNames = "<pad> <sep> <eos>";

std::uint64_t pair_key(TokenId a, TokenId b) { return (std::uint64_t(std::uint32_t(a)) << 32) | std::uint32_t(b); }

/// Replaces every non-overlapping occurrence of (a, b), left to right.
void apply_merge(TokenSeq& seq, TokenId a, TokenId b, TokenId merged) {
  std::size_t out = 0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i + 1 < seq.size() && seq[i] == a && seq[i + 1] == b) {
      seq[out++] = merged;
      ++i;
    } else {
      seq[out++] = seq[i];
    }
  }
  seq.resize(out);
}

TokenSeq to_bytes(std::string_view text) {
  TokenSeq seq;
  seq.reserve(text.size());
  for (unsigned char c : text) seq.push_back(TokenId(c));
  return seq;
}

/// Bytes consumed at s[i]: a whole well-formed UTF-8 sequence (valid),
/// or the maximal prefix of one that is still well-formed (at least 1 byte).
std::pair<std::size_t, bool> utf8_scan(std::string_view s, std::size_t i) {
  const auto c = static_cast<unsigned char>(s[i]);
  if (c < 0x80) return {1, true};
  const std::size_t n = c >= 0xC2 && c <= 0xDF ? 2 : c >= 0xE0 && c <= 0xEF ? 3 : c >= 0xF0 && c <= 0xF4 ? 4 : 1;
  std::size_t k = 1;
  while (k < n && i + k < s.size()) {
    const auto d = static_cast<unsigned char>(s[i + k]);
    unsigned char lo = 0x80, hi = 0xBF;
    if (k == 1) {
      if (c == 0xE0) lo = 0xA0;
      if (c == 0xED) hi = 0x9F;
      if (c == 0xF0) lo = 0x90;
      if (c == 0xF4) hi = 0x8F;
    }
    if (d < lo || d > hi) break;
    ++k;
  }
  return {k, n > 1 && k == n};
}

std::string to_valid_utf8(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const auto [n, valid] = utf8_scan(s, i);
    if (valid) {
      out.append(s.substr(i, n));
    } else {
      out += "\xEF\xBF\xBD";
    }
    i += n;
  }
  return out;
}

}  // namespace

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::pair<TokenId, TokenId>>{}) {}

Vocabulary::Vocabulary(std::vector<std::pair<TokenId, TokenId>> merges) : merges_(std::move(merges)) {
  tokens_.reserve(kByteTokens + merges_.size() + kSpecialTokens);
  for (std::size_t b = 0; b < kByteTokens; ++b) tokens_.emplace_back(1, char(b));
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto [a, b] = merges_[r];
    const auto limit = TokenId(kByteTokens + r);
    if (a < 0 || b < 0 || a >= limit || b >= limit) {
      throw FormatError("merge " + std::to_string(r) + " references an undefined token");
    }
    tokens_.push_back(tokens_[std::size_t(a)] + tokens_[std::size_t(b)]);
    merge_rank_.emplace(pair_key(a, b), r);
  }
  for (std::size_t s = 0; s < kSpecialTokens; ++s) tokens_.emplace_back();
}

Vocabulary Vocabulary::train(std::span<const std::string> documents, std::size_t target_size) {
  if (documents.empty()) throw InvalidInput("train_bpe: empty corpus");
  std::size_t total_bytes = 0;
  for (const auto& d : documents) total_bytes += d.size();
  if (total_bytes == 0) throw InvalidInput("train_bpe: empty corpus");
  if (target_size < kByteTokens + kSpecialTokens) {
    throw InvalidInput("train_bpe: target size must be at least " + std::to_string(kByteTokens + kSpecialTokens));
  }

  std::vector<TokenSeq> seqs;
  seqs.reserve(documents.size());
  for (const auto& d : documents) seqs.push_back(to_bytes(d));

  const std::size_t wanted = target_size - kByteTokens - kSpecialTokens;
  std::vector<std::pair<TokenId, TokenId>> merges;
  std::unordered_map<std::uint64_t, std::size_t> counts;
  while (merges.size() < wanted) {
    counts.clear();
    for (const auto& s : seqs) {
      for (std::size_t i = 0; i + 1 < s.size(); ++i) ++counts[pair_key(s[i], s[i + 1])];
    }
    std::uint64_t best_key = 0;
    std::size_t best_count = 0;
    for (const auto& [key, count] : counts) {
      if (count > best_count || (count == best_count && key < best_key)) {
        best_key = key;
        best_count = count;
      }
    }
    if (best_count < 2) break;
    const auto a = TokenId(best_key >> 32);
    const auto b = TokenId(best_key & 0xffffffffu);
    const auto merged = TokenId(kByteTokens + merges.size());
    merges.emplace_back(a, b);
    for (auto& s : seqs) apply_merge(s, a, b, merged);
  }
  return Vocabulary(std::move(merges));
}

const std::string& Vocabulary::token_bytes(TokenId id) const {
  if (id < 0 || std::size_t(id) >= tokens_.size()) {
    throw InvalidInput("token id " + std::to_string(id) + " out of range (vocabulary size " +
                       std::to_string(tokens_.size()) + ")");
  }
  return tokens_[std::size_t(id)];
}

TokenSeq Vocabulary::encode(std::string_view text) const {
  TokenSeq seq = to_bytes(text);
  while (seq.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      auto it = merge_rank_.find(pair_key(seq[i], seq[i + 1]));
      if (it != merge_rank_.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    const auto [a, b] = merges_[best_rank];
    apply_merge(seq, a, b, TokenId(kByteTokens + best_rank));
  }
  return seq;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += token_bytes(id);
  return to_valid_utf8(out);
}

std::string Vocabulary::serialize() const {
  std::string out;
  out += kHeader;
  out += "\nspecials ";
  out += kSpecialNames;
  out += "\nmerges " + std::to_string(merges_.size()) + "\n";
  for (const auto& [a, b] : merges_) out += std::to_string(a) + " " + std::to_string(b) + "\n";
  return out;
}

Vocabulary Vocabulary::parse(std::string_view contents) {
  std::istringstream in{std::string(contents)};
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw FormatError("vocabulary: bad header");
  if (!std::getline(in, line) || line != "specials " + std::string(kSpecialNames)) {
    throw FormatError("vocabulary: unexpected specials line");
  }
  std::string word;
  std::size_t count = 0;
  if (!(in >> word >> count) || word != "merges") throw FormatError("vocabulary: missing merge count");
  std::vector<std::pair<TokenId, TokenId>> merges(count);
  for (auto& [a, b] : merges) {
    if (!(in >> a >> b)) throw FormatError("vocabulary: truncated merge list");
  }
  if (in >> word) throw FormatError("vocabulary: trailing content");
  return Vocabulary(std::move(merges));
}

void Vocabulary::save(const std::filesystem::path& path) const { nn::write_file_atomic(path, serialize()); }

Vocabulary Vocabulary::load(const std::filesystem::path& path) { return parse(nn::read_file(path)); }

TokenSeq encode_prompt(const Vocabulary& vocab, std::string_view context) {
  TokenSeq out;
  std::size_t start = 0;
  while (true) {
    const auto end = context.find('\n', start);
    const auto turn = context.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    const auto ids = vocab.encode(turn);
    out.insert(out.end(), ids.begin(), ids.end());
    out.push_back(vocab.sep());
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

DialogTokens encode_dialog(const Vocabulary& vocab, std::string_view context, std::string_view response) {
  DialogTokens d;
  d.tokens = encode_prompt(vocab, context);
  d.response_start = d.tokens.size();
  const auto ids = vocab.encode(response);
  d.tokens.insert(d.tokens.end(), ids.begin(), ids.end());
  d.tokens.push_back(vocab.eos());
  return d;
}

}  // namespace paln::text
