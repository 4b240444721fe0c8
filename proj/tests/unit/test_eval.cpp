#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "desk_fixture.hpp"
#include "paln/error.hpp"
#include "paln/eval/metrics.hpp"
#include "paln/eval/report.hpp"
#include "paln/nn/functional.hpp"
#include "paln/random.hpp"
#include "toy_models.hpp"

namespace paln::eval {
namespace {

struct BleuFixture {
  std::vector<std::string> candidates;
  std::vector<std::vector<std::string>> references;
};

BleuFixture load_bleu_fixture() {
  std::ifstream in(testing::fixture_dir() / "bleu_fixture.json");
  const auto j = nlohmann::json::parse(in);
  return {j.at("candidates").get<std::vector<std::string>>(),
          j.at("references").get<std::vector<std::vector<std::string>>>()};
}

double golden_bleu() {
  std::ifstream in(testing::fixture_dir() / "bleu_golden.txt");
  double v = 0.0;
  in >> v;
  return v;
}

TEST(BleuTokenize, LowercasesAndDetachesPunctuation) {
  EXPECT_EQ(bleu_tokenize("¿Qué tal, Ana?  Bien!"),
            (std::vector<std::string>{"¿", "qué", "tal", ",", "ana", "?", "bien", "!"}));
  EXPECT_TRUE(bleu_tokenize("   ").empty());
}

TEST(Bleu, IdentityIsExactlyHundred) {
  const auto fx = load_bleu_fixture();
  std::vector<std::vector<std::string>> self;
  for (const auto& c : fx.candidates) self.push_back({c});
  EXPECT_EQ(bleu(fx.candidates, self), 100.0);
}

TEST(Bleu, DisjointIsZero) {
  const std::vector<std::string> c{"alpha beta gamma delta", "one two three four five"};
  const std::vector<std::vector<std::string>> r{{"uno dos tres cuatro"}, {"x y z w v"}};
  EXPECT_EQ(bleu(c, r), 0.0);
}

TEST(Bleu, MissingFourGramsGiveZero) {
  const std::vector<std::string> c{"the cat sat"};
  const std::vector<std::vector<std::string>> r{{"the cat sat"}};
  EXPECT_EQ(bleu(c, r), 0.0);
  EXPECT_EQ(bleu(c, r, 3), 100.0);
}

TEST(Bleu, GoldenFixtureMatchesReferenceImplementation) {
  const auto fx = load_bleu_fixture();
  const auto start = std::chrono::steady_clock::now();
  const double got = bleu(fx.candidates, fx.references);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_NEAR(got, golden_bleu(), 1e-6);
  EXPECT_LT(seconds, 1.0);
}

TEST(Bleu, PermutationInvariant) {
  auto fx = load_bleu_fixture();
  const double base = bleu(fx.candidates, fx.references);
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    for (std::size_t i = fx.candidates.size(); i > 1; --i) {
      const std::size_t j = rng.below(i);
      std::swap(fx.candidates[i - 1], fx.candidates[j]);
      std::swap(fx.references[i - 1], fx.references[j]);
    }
    EXPECT_DOUBLE_EQ(bleu(fx.candidates, fx.references), base);
  }
}

TEST(Bleu, CandidateAmongItsReferences) {
  auto fx = load_bleu_fixture();
  for (std::size_t i = 0; i < fx.candidates.size(); ++i) fx.references[i].push_back(fx.candidates[i]);
  EXPECT_EQ(bleu(fx.candidates, fx.references), 100.0);
}

TEST(Bleu, SentenceMeanMode) {
  const std::vector<std::string> c{"a b c d", "w x y z"};
  const std::vector<std::vector<std::string>> r{{"a b c d"}, {"q r s t"}};
  EXPECT_DOUBLE_EQ(bleu(c, r, 4, BleuMode::sentence_mean), 50.0);
}

TEST(Bleu, RejectsBadInput) {
  EXPECT_THROW(bleu(std::vector<std::string>{}, std::vector<std::vector<std::string>>{}), InvalidInput);
  EXPECT_THROW(bleu(std::vector<std::string>{"a"}, std::vector<std::vector<std::string>>{}), InvalidInput);
}

TEST(Bleu, LargeCorpusIsFast) {
  const auto fx = load_bleu_fixture();
  std::vector<std::string> c;
  std::vector<std::vector<std::string>> r;
  for (int k = 0; k < 400; ++k) {
    c.insert(c.end(), fx.candidates.begin(), fx.candidates.end());
    r.insert(r.end(), fx.references.begin(), fx.references.end());
  }
  const auto start = std::chrono::steady_clock::now();
  EXPECT_NEAR(bleu(c, r), golden_bleu(), 1e-6);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 1.0);
}

TEST(Perplexity, UniformModelIsTheVocabularySize) {
  const auto model = testing::uniform_model(50);
  const std::vector<train::TrainingSequence> seqs{{{1, 2, 3, 4}, {2, 3, 4, 5}, {0, 1, 1, 1}},
                                                   {{7, 8}, {8, 49}, {1, 1}}};
  EXPECT_NEAR(perplexity(model, seqs), 50.0, 1e-9);
}

TEST(Perplexity, HandBuiltTwoTokenFixture) {
  // p(target) is 0.5 at the first position and 0.25 at the second.
  const testing::FunctionModel model(4, 3, [](std::span<const lm::TokenId> ctx) {
    if (ctx.size() == 1) return std::vector<double>{std::log(0.25), std::log(0.5), std::log(0.125), std::log(0.125)};
    return std::vector<double>{std::log(0.25), std::log(0.25), std::log(0.25), std::log(0.25)};
  });
  const std::vector<train::TrainingSequence> seqs{{{0, 1}, {1, 2}, {1, 1}}};
  constexpr double kSqrt8 = 2.828427124746190097603377448419396157139;
  EXPECT_NEAR(perplexity(model, seqs), kSqrt8, 1e-9);
}

TEST(Perplexity, MatchesDirectSummation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t vocab = 3 + seed;
    const auto model = testing::random_context_model(vocab, lm::TokenId(vocab - 1), seed);
    Rng rng(seed + 100);
    std::vector<train::TrainingSequence> seqs(3);
    double log_sum = 0.0, count = 0.0;
    for (auto& s : seqs) {
      const std::size_t n = 2 + rng.below(6);
      for (std::size_t i = 0; i < n; ++i) {
        s.inputs.push_back(lm::TokenId(rng.below(vocab)));
        s.targets.push_back(lm::TokenId(rng.below(vocab)));
        s.weights.push_back(i < 1 ? 0.0 : 1.0);
      }
      for (std::size_t i = 1; i < n; ++i) {
        const auto probs = nn::softmax(model.logits_last(std::span(s.inputs).first(i + 1)));
        log_sum += std::log(probs[s.targets[i]]);
        count += 1.0;
      }
    }
    EXPECT_NEAR(perplexity(model, seqs), std::exp(-log_sum / count), 1e-12 * std::exp(-log_sum / count));
  }
}

TEST(Perplexity, RejectsEmpty) {
  const auto model = testing::uniform_model(5);
  EXPECT_THROW(perplexity(model, std::vector<train::TrainingSequence>{}), InvalidInput);
  const std::vector<train::TrainingSequence> masked{{{1, 2}, {2, 3}, {0, 0}}};
  EXPECT_THROW(perplexity(model, masked), InvalidInput);
}

lm::LmModel tiny_model(std::size_t vocab, std::uint64_t seed) {
  lm::LmConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.max_context = 64;
  c.ff_width = 32;
  return lm::LmModel(c, seed);
}

TEST(Perplexity, DropsAfterMemorization) {
  const text::Vocabulary vocab;
  auto model = tiny_model(vocab.size(), 2);
  const std::vector<train::DialogPair> pairs{{"hola", "buenas"}, {"adios", "hasta luego"}, {"gracias", "de nada"}};
  const double before = perplexity(model, vocab, pairs);
  train::TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.learning_rate = 3e-3;
  cfg.epochs = 60;
  cfg.l1_factor = 0.0;
  train::finetune_lm(model, vocab, pairs, cfg, train::Phase::base_corpus);
  const double after = perplexity(model, vocab, pairs);
  EXPECT_LT(after, before);
  EXPECT_LT(after, 1.5);
}

TEST(CompareDecoders, DeterministicSettingsAgreeAcrossStrategies) {
  const text::Vocabulary vocab;
  const auto model = tiny_model(vocab.size(), 3);
  const reward::RewardNet net({16, 8, 8}, 4);
  decode::DecodeParams params;
  params.temperature = 0.0;
  params.candidates = 1;
  params.beam_width = 1;
  params.max_length = 8;
  const std::vector<std::string> q{"hola"};
  const std::vector<std::vector<std::string>> refs{{"buenas tardes"}};
  const auto report = compare_decoders(model, vocab, &net, q, refs, params);
  ASSERT_EQ(report.results.size(), 3u);
  for (const auto& r : report.results) {
    EXPECT_EQ(r.answers, report.results[0].answers);
    EXPECT_EQ(r.bleu, report.results[0].bleu);
    EXPECT_EQ(r.perplexity, report.results[0].perplexity);
  }
}

TEST(CompareDecoders, ReportShapeAndDeterminism) {
  const text::Vocabulary vocab;
  const auto model = tiny_model(vocab.size(), 5);
  const reward::RewardNet net({16, 8, 8}, 6);
  decode::DecodeParams params;
  params.max_length = 6;
  params.candidates = 3;
  params.beam_width = 2;
  params.seed = 9;
  const std::vector<std::string> q{"uno", "dos", "tres"};
  const std::vector<std::vector<std::string>> refs{{"a"}, {"b"}, {"c", "d"}};
  const auto a = compare_decoders(model, vocab, &net, q, refs, params);
  const auto b = compare_decoders(model, vocab, &net, q, refs, params);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());

  const auto j = a.to_json();
  ASSERT_EQ(j.at("strategies").size(), 3u);
  for (const auto& s : j.at("strategies")) {
    EXPECT_TRUE(s.contains("bleu"));
    EXPECT_TRUE(s.contains("perplexity"));
    EXPECT_EQ(s.at("answers").size(), 3u);
  }
  const auto table = a.table();
  EXPECT_NE(table.find("Sampling with reward"), std::string::npos);
  EXPECT_NE(table.find("Beam search"), std::string::npos);
  EXPECT_NE(table.find("BLEU"), std::string::npos);
  EXPECT_NE(table.find("Perp."), std::string::npos);
  const auto csv = a.per_question_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "index,question,reference,strategy,answer,reward");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 9);
}

TEST(CompareDecoders, ReferencePerplexityMode) {
  const text::Vocabulary vocab;
  const auto model = tiny_model(vocab.size(), 5);
  decode::DecodeParams params;
  params.max_length = 4;
  EvalOptions opts;
  opts.strategies = parse_strategies("sampling,beam");
  opts.perplexity_mode = PerplexityMode::reference;
  const std::vector<std::string> q{"uno"};
  const std::vector<std::vector<std::string>> refs{{"a b"}};
  const auto r = compare_decoders(model, vocab, nullptr, q, refs, params, opts);
  ASSERT_EQ(r.results.size(), 2u);
  for (const auto& s : r.results) EXPECT_EQ(s.perplexity, r.reference_perplexity);
}

TEST(CompareDecoders, RewardNeedsANet) {
  const text::Vocabulary vocab;
  const auto model = tiny_model(vocab.size(), 5);
  const std::vector<std::string> q{"uno"};
  const std::vector<std::vector<std::string>> refs{{"a"}};
  decode::DecodeParams params;
  params.max_length = 3;
  EXPECT_THROW(compare_decoders(model, vocab, nullptr, q, refs, params), UsageError);
  EXPECT_THROW(compare_decoders(model, vocab, nullptr, q, {}, params), InvalidInput);
}

TEST(Strategies, Parsing) {
  EXPECT_EQ(parse_strategies("sampling,reward,beam").size(), 3u);
  EXPECT_EQ(parse_strategy("beam"), Strategy::beam);
  EXPECT_THROW(parse_strategy("greedy"), InvalidInput);
  EXPECT_THROW(parse_strategies(""), InvalidInput);
}

}  // namespace
}  // namespace paln::eval
