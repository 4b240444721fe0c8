#include "paln/eval/report.hpp"

#include <cstdio>
#include <sstream>

#include "paln/error.hpp"
#include "paln/random.hpp"

namespace paln::eval {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::sampling: return "sampling";
    case Strategy::reward: return "reward";
    case Strategy::beam: return "beam";
  }
  return "?";
}

std::string_view display_name(Strategy s) {
  switch (s) {
    case Strategy::sampling: return "Sampling";
    case Strategy::reward: return "Sampling with reward";
    case Strategy::beam: return "Beam search";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "sampling") return Strategy::sampling;
  if (name == "reward") return Strategy::reward;
  if (name == "beam") return Strategy::beam;
  throw InvalidInput("unknown strategy '" + std::string(name) + "' (expected sampling|reward|beam)");
}

std::vector<Strategy> parse_strategies(std::string_view list) {
  std::vector<Strategy> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    auto end = list.find(',', start);
    if (end == std::string_view::npos) end = list.size();
    const auto item = list.substr(start, end - start);
    if (!item.empty()) out.push_back(parse_strategy(item));
    start = end + 1;
  }
  if (out.empty()) throw InvalidInput("no strategies given");
  return out;
}

Answer answer_question(const lm::LmModel& model, const text::Vocabulary& vocab, const reward::RewardNet* reward_net,
                       std::string_view question, Strategy strategy, const decode::DecodeParams& params) {
  params.validate();
  const auto prompt = reward::question_tokens(vocab, question);
  std::optional<reward::EmbeddingRewardScorer> scorer;
  if (reward_net) scorer.emplace(model, *reward_net);
  Answer out;
  text::TokenSeq tokens;
  switch (strategy) {
    case Strategy::sampling:
      tokens = decode::sample_candidate(model, prompt, params, params.seed).tokens;
      break;
    case Strategy::reward: {
      if (!scorer) throw UsageError("reward decoding needs a reward model");
      auto result = decode::decode_with_rewards(model, vocab, *scorer, prompt, params);
      out.text = std::move(result.text);
      out.reward_score = result.candidates[result.chosen].score;
      return out;
    }
    case Strategy::beam:
      tokens = decode::beam_search(model, prompt, params.beam_width, params.max_length).tokens;
      break;
  }
  out.text = vocab.decode(tokens);
  if (scorer) out.reward_score = scorer->score(prompt, tokens);
  return out;
}

EvalReport compare_decoders(const lm::LmModel& model, const text::Vocabulary& vocab, const reward::RewardNet* reward_net,
                            std::span<const std::string> questions,
                            std::span<const std::vector<std::string>> references, const decode::DecodeParams& params,
                            const EvalOptions& options) {
  params.validate();
  if (questions.empty()) throw InvalidInput("compare_decoders: no questions");
  if (questions.size() != references.size()) throw InvalidInput("compare_decoders: question/reference count mismatch");

  EvalReport report;
  report.questions.assign(questions.begin(), questions.end());
  report.references.assign(references.begin(), references.end());
  report.params = params;
  report.options = options;

  std::vector<train::DialogPair> reference_pairs;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    for (const auto& r : references[i]) reference_pairs.push_back({questions[i], r});
  }
  report.reference_perplexity = perplexity(model, vocab, reference_pairs);

  for (Strategy s : options.strategies) {
    StrategyResult result;
    result.strategy = s;
    std::vector<train::DialogPair> generated;
    for (std::size_t i = 0; i < questions.size(); ++i) {
      auto p = params;
      p.seed = derive_seed(params.seed, i);
      auto answer = answer_question(model, vocab, reward_net, questions[i], s, p);
      generated.push_back({questions[i], answer.text});
      result.answers.push_back(std::move(answer.text));
      result.reward_scores.push_back(answer.reward_score);
    }
    result.bleu = bleu(result.answers, references, 4, options.bleu_mode);
    result.perplexity = options.perplexity_mode == PerplexityMode::generated ? perplexity(model, vocab, generated)
                                                                             : report.reference_perplexity;
    report.results.push_back(std::move(result));
  }
  return report;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["metadata"] = {
      {"model", options.model_id},
      {"reward_model", options.reward_id},
      {"bleu_mode", options.bleu_mode == BleuMode::corpus ? "corpus" : "sentence_mean"},
      {"perplexity_mode", options.perplexity_mode == PerplexityMode::generated ? "generated" : "reference"},
      {"decode_params",
       {{"temperature", params.temperature},
        {"max_length", params.max_length},
        {"candidates", params.candidates},
        {"top_k", params.top_k},
        {"top_p", params.top_p},
        {"beam_width", params.beam_width},
        {"seed", params.seed}}},
  };
  j["reference_perplexity"] = reference_perplexity;
  j["questions"] = questions;
  j["references"] = references;
  j["strategies"] = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json s = {{"name", to_string(r.strategy)}, {"bleu", r.bleu}, {"perplexity", r.perplexity},
                        {"answers", r.answers}};
    auto scores = nlohmann::json::array();
    for (const auto& sc : r.reward_scores) scores.push_back(sc ? nlohmann::json(*sc) : nlohmann::json(nullptr));
    s["reward_scores"] = scores;
    j["strategies"].push_back(std::move(s));
  }
  return j;
}

std::string EvalReport::table() const {
  std::ostringstream out;
  char buf[64];
  out << std::string(8, ' ');
  for (const auto& r : results) {
    std::snprintf(buf, sizeof(buf), " | %22s", std::string(display_name(r.strategy)).c_str());
    out << buf;
  }
  out << "\n";
  out << std::string(8, '-');
  for (std::size_t i = 0; i < results.size(); ++i) out << "-+-" << std::string(22, '-');
  out << "\n";
  auto row = [&](const char* label, auto value) {
    std::snprintf(buf, sizeof(buf), "%-8s", label);
    out << buf;
    for (const auto& r : results) {
      std::snprintf(buf, sizeof(buf), " | %22.2f", value(r));
      out << buf;
    }
    out << "\n";
  };
  row("BLEU", [](const StrategyResult& r) { return r.bleu; });
  row("Perp.", [](const StrategyResult& r) { return r.perplexity; });
  return out.str();
}

namespace {

std::string csv_field(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string EvalReport::per_question_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "index,question,reference,strategy,answer,reward\n";
  for (const auto& r : results) {
    for (std::size_t i = 0; i < questions.size(); ++i) {
      out << i << ',' << csv_field(questions[i]) << ','
          << csv_field(references[i].empty() ? "" : references[i].front()) << ',' << to_string(r.strategy) << ','
          << csv_field(r.answers[i]) << ',';
      if (r.reward_scores[i]) out << *r.reward_scores[i];
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace paln::eval
