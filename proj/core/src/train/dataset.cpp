#include "paln/train/dataset.hpp"

#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "paln/error.hpp"
#include "paln/nn/checkpoint.hpp"
#include "paln/random.hpp"

namespace paln::train {
namespace {

bool blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

template <typename F>
void for_each_json_line(std::string_view contents, F&& fn) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= contents.size()) {
    auto end = contents.find('\n', start);
    if (end == std::string_view::npos) end = contents.size();
    const auto line = contents.substr(start, end - start);
    ++line_no;
    if (!blank(line)) {
      try {
        fn(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
      } catch (const InvalidInput& e) {
        throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    start = end + 1;
  }
}

}  // namespace

void validate(const DialogPair& pair) {
  if (blank(pair.context)) throw InvalidInput("dialog pair has an empty context");
  if (blank(pair.response)) throw InvalidInput("dialog pair has an empty response");
}

void validate(const PreferenceExample& example) {
  if (!(example.score >= 0.0 && example.score <= 1.0)) {
    throw InvalidInput("preference score " + std::to_string(example.score) + " outside [0, 1]");
  }
}

std::vector<DialogPair> parse_dialog_jsonl(std::string_view contents) {
  std::vector<DialogPair> out;
  for_each_json_line(contents, [&](const nlohmann::json& j) {
    DialogPair p{j.at("context").get<std::string>(), j.at("response").get<std::string>()};
    validate(p);
    out.push_back(std::move(p));
  });
  return out;
}

std::vector<PreferenceExample> parse_preference_jsonl(std::string_view contents) {
  std::vector<PreferenceExample> out;
  for_each_json_line(contents, [&](const nlohmann::json& j) {
    PreferenceExample e{j.at("question").get<std::string>(), j.at("answer").get<std::string>(),
                        j.at("score").get<double>()};
    validate(e);
    out.push_back(std::move(e));
  });
  return out;
}

std::string to_jsonl(std::span<const DialogPair> pairs) {
  std::string out;
  for (const auto& p : pairs) out += nlohmann::json{{"context", p.context}, {"response", p.response}}.dump() + "\n";
  return out;
}

std::string to_jsonl(std::span<const PreferenceExample> examples) {
  std::string out;
  for (const auto& e : examples) {
    out += nlohmann::json{{"question", e.question}, {"answer", e.answer}, {"score", e.score}}.dump() + "\n";
  }
  return out;
}

std::vector<DialogPair> load_dialogs(const std::filesystem::path& path) {
  try {
    return parse_dialog_jsonl(nn::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<PreferenceExample> load_preferences(const std::filesystem::path& path) {
  try {
    return parse_preference_jsonl(nn::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_dialogs(const std::filesystem::path& path, std::span<const DialogPair> pairs) {
  nn::write_file_atomic(path, to_jsonl(pairs));
}

void save_preferences(const std::filesystem::path& path, std::span<const PreferenceExample> examples) {
  nn::write_file_atomic(path, to_jsonl(examples));
}

Split split_dataset(std::span<const DialogPair> pairs, double train_fraction, std::uint64_t seed) {
  if (pairs.size() < 2) throw InvalidInput("split_dataset: need at least 2 pairs");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidInput("split_dataset: fraction must be in (0, 1)");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  const auto n_train = std::size_t(std::lround(train_fraction * double(pairs.size())));
  Split split;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? split.train : split.validation).push_back(pairs[order[i]]);
  }
  return split;
}

std::vector<PreferenceExample> merge_gold(std::span<const PreferenceExample> rated, std::span<const DialogPair> gold) {
  std::vector<PreferenceExample> out(rated.begin(), rated.end());
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> index;
  for (std::size_t i = 0; i < out.size(); ++i) index[{out[i].question, out[i].answer}].push_back(i);
  for (const auto& g : gold) {
    auto [it, inserted] = index.try_emplace({g.context, g.response});
    if (inserted) {
      it->second.push_back(out.size());
      out.push_back({g.context, g.response, 1.0});
    } else {
      for (std::size_t i : it->second) out[i].score = 1.0;
    }
  }
  return out;
}

}  // namespace paln::train
