#include "desk_fixture.hpp"

#include <algorithm>
#include <chrono>

namespace paln::testing {

std::filesystem::path fixture_dir() { return PALN_FIXTURE_DIR; }

std::vector<train::DialogPair> base_corpus() { return train::load_dialogs(fixture_dir() / "base_corpus.jsonl"); }
std::vector<train::DialogPair> closed_domain() { return train::load_dialogs(fixture_dir() / "closed_domain.jsonl"); }

std::vector<std::string> contexts(const std::vector<train::DialogPair>& pairs) {
  std::vector<std::string> out;
  for (const auto& p : pairs) out.push_back(p.context);
  return out;
}

std::vector<std::string> responses(const std::vector<train::DialogPair>& pairs) {
  std::vector<std::string> out;
  for (const auto& p : pairs) out.push_back(p.response);
  return out;
}

double similarity(const std::string& a, const std::string& b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 1.0;
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] != b[j - 1] ? 1 : 0)});
      diag = up;
    }
  }
  return 1.0 - double(row[b.size()]) / double(longest);
}

double synthetic_rating(const std::string& answer, const std::string& gold) {
  const double s = similarity(answer, gold);
  return s >= kNearMissSimilarity ? s : 0.4 * s;
}

std::vector<train::PreferenceExample> rate_candidates(const std::vector<train::DialogPair>& candidates,
                                                      const std::vector<train::DialogPair>& gold) {
  std::vector<train::PreferenceExample> out;
  for (const auto& c : candidates) {
    auto it = std::find_if(gold.begin(), gold.end(), [&](const auto& g) { return g.context == c.context; });
    out.push_back({c.context, c.response, synthetic_rating(c.response, it->response)});
  }
  return out;
}

text::Vocabulary fixture_vocabulary(const std::vector<train::DialogPair>& base,
                                    const std::vector<train::DialogPair>& gold, std::size_t target_size) {
  std::vector<std::string> docs;
  for (const auto* set : {&base, &gold}) {
    for (const auto& p : *set) {
      docs.push_back(p.context);
      docs.push_back(p.response);
    }
  }
  return text::Vocabulary::train(docs, target_size);
}

DeskRun run_desk_pipeline(const DeskConfig& config) {
  const auto base = base_corpus();
  const auto gold = closed_domain();
  DeskRun run;
  run.vocab = fixture_vocabulary(base, gold, config.vocab_size);

  lm::LmConfig lm_config;
  lm_config.vocab_size = run.vocab.size();
  run.model = lm::LmModel(lm_config, config.model_seed);
  run.phase1_curve = train::finetune_lm(run.model, run.vocab, base, config.phase1, train::Phase::base_corpus);
  run.phase2_curve = train::finetune_lm(run.model, run.vocab, gold, config.phase2, train::Phase::closed_domain);

  decode::DecodeParams sampling;
  sampling.seed = config.candidate_seed;
  sampling.max_length = config.candidate_max_length;
  const auto questions = contexts(gold);
  const auto answers = responses(gold);
  run.candidates = train::generate_preference_candidates(run.model, run.vocab, questions,
                                                         config.candidates_per_question, sampling, answers);
  run.rated = rate_candidates(run.candidates, gold);
  run.merged = train::merge_gold(run.rated, gold);

  const auto train_set = reward::embed_examples(run.model, run.vocab, run.merged);
  const auto gold_set = reward::embed_examples(run.model, run.vocab, std::span<const train::DialogPair>(gold));
  run.net = reward::RewardNet(reward::RewardConfig{lm_config.d_model, 128, 64}, config.reward_seed);
  const auto start = std::chrono::steady_clock::now();
  run.reward_curve = reward::train_reward(run.net, train_set, gold_set, config.reward);
  run.reward_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

DeskConfig reduced_desk_config() {
  DeskConfig c;
  c.vocab_size = 300;
  c.phase1.epochs = 0.1;
  c.phase2.epochs = 1;
  c.candidate_max_length = 12;
  c.reward.epochs = 5;
  return c;
}

}  // namespace paln::testing
