#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace paln::text {

using TokenId = int;
using TokenSeq = std::vector<TokenId>;

/// Byte-level BPE vocabulary.
///
/// Ids 0..255 are raw bytes, then one id per learned merge in priority
/// order, then the three specials (PAD, SEP, EOS) at the top of the range.
class Vocabulary {
 public:
  static constexpr std::size_t kByteTokens = 256;
  static constexpr std::size_t kSpecialTokens = 3;

  /// Pure byte vocabulary (no merges).
  Vocabulary();

  /// Learns merges until the vocabulary reaches `target_size` or no adjacent
  /// pair occurs at least twice. Pairs are counted at every adjacent position
  /// of every document; the most frequent pair wins, ties go to the smallest
  /// (left, right) id pair.
  static Vocabulary train(std::span<const std::string> documents, std::size_t target_size);

  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t merge_count() const noexcept { return merges_.size(); }
  const std::vector<std::pair<TokenId, TokenId>>& merges() const noexcept { return merges_; }

  TokenId pad() const noexcept { return TokenId(kByteTokens + merges_.size()); }
  TokenId sep() const noexcept { return pad() + 1; }
  TokenId eos() const noexcept { return pad() + 2; }
  bool is_special(TokenId id) const noexcept { return id >= pad() && id <= eos(); }

  /// Byte string a token stands for; empty for specials.
  const std::string& token_bytes(TokenId id) const;

  /// Applies merges in learned priority order until none applies.
  TokenSeq encode(std::string_view text) const;
  /// Concatenates token bytes; specials render as "". Malformed UTF-8 in
  /// the result becomes U+FFFD, one per maximal bad subpart. Throws on
  /// ids >= size().
  std::string decode(std::span<const TokenId> ids) const;

  /// Text file: header line, specials line, merge count, one "left right"
  /// id pair per line.
  std::string serialize() const;
  static Vocabulary parse(std::string_view contents);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.merges_ == b.merges_; }

 private:
  explicit Vocabulary(std::vector<std::pair<TokenId, TokenId>> merges);

  std::vector<std::pair<TokenId, TokenId>> merges_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::uint64_t, std::size_t> merge_rank_;
};

/// Turn delimiting for dialogue data: turns are newline-separated inside a
/// context string and joined with SEP.
TokenSeq encode_prompt(const Vocabulary& vocab, std::string_view context);
/// prompt tokens ++ response tokens ++ EOS, with the index where the
/// response starts.
struct DialogTokens {
  TokenSeq tokens;
  std::size_t response_start = 0;
};
DialogTokens encode_dialog(const Vocabulary& vocab, std::string_view context, std::string_view response);

}  // namespace paln::text
