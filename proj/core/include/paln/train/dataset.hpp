#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace paln::train {

/// One dialogue example: context turns are newline separated.
struct DialogPair {
  std::string context;
  std::string response;

  friend bool operator==(const DialogPair&, const DialogPair&) = default;
};

/// A (question, answer) pair with a human rating in [0, 1].
struct PreferenceExample {
  std::string question;
  std::string answer;
  double score = 0.0;

  friend bool operator==(const PreferenceExample&, const PreferenceExample&) = default;
};

/// Throws when context or response is blank after trimming.
void validate(const DialogPair& pair);
void validate(const PreferenceExample& example);

// JSON Lines: {"context": str, "response": str} and
// {"question": str, "answer": str, "score": number}. Blank lines are skipped.
std::vector<DialogPair> parse_dialog_jsonl(std::string_view contents);
std::vector<PreferenceExample> parse_preference_jsonl(std::string_view contents);
std::string to_jsonl(std::span<const DialogPair> pairs);
std::string to_jsonl(std::span<const PreferenceExample> examples);

std::vector<DialogPair> load_dialogs(const std::filesystem::path& path);
std::vector<PreferenceExample> load_preferences(const std::filesystem::path& path);
void save_dialogs(const std::filesystem::path& path, std::span<const DialogPair> pairs);
void save_preferences(const std::filesystem::path& path, std::span<const PreferenceExample> examples);

struct Split {
  std::vector<DialogPair> train;
  std::vector<DialogPair> validation;
};

/// Seeded shuffle, then the first round(train_fraction * n) go to training.
Split split_dataset(std::span<const DialogPair> pairs, double train_fraction, std::uint64_t seed);

/// Appends each gold pair with score 1.0. A gold pair whose question and
/// answer text already occur among the rated entries is not appended again;
/// those entries are raised to 1.0 instead. Rated entries are never merged
/// with each other, so every rating survives exactly once.
std::vector<PreferenceExample> merge_gold(std::span<const PreferenceExample> rated, std::span<const DialogPair> gold);

}  // namespace paln::train
