#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "paln/decode/decoding.hpp"
#include "paln/eval/metrics.hpp"
#include "paln/lm/model.hpp"
#include "paln/reward/reward_net.hpp"

namespace paln::eval {

enum class Strategy { sampling, reward, beam };

std::string_view to_string(Strategy s);
/// Column title used in the comparison table.
std::string_view display_name(Strategy s);
Strategy parse_strategy(std::string_view name);
/// Comma-separated list, e.g. "sampling,reward,beam".
std::vector<Strategy> parse_strategies(std::string_view list);

enum class PerplexityMode {
  generated,   ///< model perplexity on each strategy's own answers
  reference,   ///< model perplexity on the reference answers (same for all)
};

struct StrategyResult {
  Strategy strategy = Strategy::sampling;
  double bleu = 0.0;
  double perplexity = 0.0;
  std::vector<std::string> answers;
  std::vector<std::optional<double>> reward_scores;  ///< reward of the chosen answer, when known
};

struct EvalOptions {
  std::vector<Strategy> strategies{Strategy::sampling, Strategy::reward, Strategy::beam};
  BleuMode bleu_mode = BleuMode::corpus;
  PerplexityMode perplexity_mode = PerplexityMode::generated;
  std::string model_id;
  std::string reward_id;
};

struct EvalReport {
  std::vector<std::string> questions;
  std::vector<std::vector<std::string>> references;
  std::vector<StrategyResult> results;
  double reference_perplexity = 0.0;
  decode::DecodeParams params;
  EvalOptions options;

  nlohmann::json to_json() const;
  /// Metrics as rows, strategies as columns.
  std::string table() const;
  /// CSV "index,question,reference,strategy,answer,reward".
  std::string per_question_csv() const;
};

/// Answers every question with each requested strategy under the same
/// per-question seed derive_seed(params.seed, i), then scores BLEU against
/// the references and perplexity per options.perplexity_mode. The reward
/// strategy needs `reward_net`.
EvalReport compare_decoders(const lm::LmModel& model, const text::Vocabulary& vocab, const reward::RewardNet* reward_net,
                            std::span<const std::string> questions,
                            std::span<const std::vector<std::string>> references, const decode::DecodeParams& params,
                            const EvalOptions& options = {});

/// One answer with one strategy; shared by the evaluator, the service and
/// the REPL.
struct Answer {
  std::string text;
  std::optional<double> reward_score;
};
Answer answer_question(const lm::LmModel& model, const text::Vocabulary& vocab, const reward::RewardNet* reward_net,
                       std::string_view question, Strategy strategy, const decode::DecodeParams& params);

}  // namespace paln::eval
