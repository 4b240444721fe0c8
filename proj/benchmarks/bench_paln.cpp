#include <benchmark/benchmark.h>

#include <filesystem>

#include "paln/decode/decoding.hpp"
#include "paln/eval/metrics.hpp"
#include "paln/lm/model.hpp"
#include "paln/reward/reward_net.hpp"
#include "paln/train/dataset.hpp"
#include "paln/train/finetune.hpp"

namespace {

using namespace paln;

const std::vector<train::DialogPair>& gold() {
  static const auto pairs = train::load_dialogs(std::filesystem::path(PALN_FIXTURE_DIR) / "closed_domain.jsonl");
  return pairs;
}

std::vector<std::string> documents() {
  std::vector<std::string> docs;
  for (const auto& p : gold()) {
    docs.push_back(p.context);
    docs.push_back(p.response);
  }
  return docs;
}

const text::Vocabulary& vocab() {
  static const auto v = text::Vocabulary::train(documents(), 512);
  return v;
}

lm::LmConfig model_config(std::size_t d_model) {
  lm::LmConfig c;
  c.vocab_size = vocab().size();
  c.d_model = d_model;
  c.ff_width = 4 * d_model;
  return c;
}

void BM_BpeTrain(benchmark::State& state) {
  const auto docs = documents();
  for (auto _ : state) benchmark::DoNotOptimize(text::Vocabulary::train(docs, std::size_t(state.range(0))));
}
BENCHMARK(BM_BpeTrain)->Arg(300)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_BpeEncode(benchmark::State& state) {
  const auto& v = vocab();
  std::size_t bytes = 0;
  for (auto _ : state) {
    for (const auto& p : gold()) {
      benchmark::DoNotOptimize(v.encode(p.response));
      bytes += p.response.size();
    }
  }
  state.SetBytesProcessed(std::int64_t(bytes));
}
BENCHMARK(BM_BpeEncode);

void BM_LogitsLast(benchmark::State& state) {
  const lm::LmModel model(model_config(std::size_t(state.range(1))), 1);
  const text::TokenSeq context(std::size_t(state.range(0)), 40);
  for (auto _ : state) benchmark::DoNotOptimize(model.logits_last(context));
}
BENCHMARK(BM_LogitsLast)->Args({16, 64})->Args({64, 64})->Args({128, 64})->Args({64, 128})->Unit(benchmark::kMicrosecond);

void BM_TrainStep(benchmark::State& state) {
  lm::LmModel model(model_config(64), 1);
  const std::span<const train::DialogPair> pairs(gold().data(), std::size_t(state.range(0)));
  auto config = train::TrainConfig::closed_domain_defaults();
  config.batch_size = pairs.size();
  config.epochs = 1.0;
  for (auto _ : state) benchmark::DoNotOptimize(train::finetune_lm(model, vocab(), pairs, config, train::Phase::base_corpus));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_BeamSearch(benchmark::State& state) {
  const lm::LmModel model(model_config(64), 2);
  const auto prompt = reward::question_tokens(vocab(), gold()[0].context);
  for (auto _ : state) {
    benchmark::DoNotOptimize(decode::beam_search(model, prompt, std::size_t(state.range(0)), 20));
  }
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(6)->Unit(benchmark::kMillisecond);

void BM_RewardDecode(benchmark::State& state) {
  const lm::LmModel model(model_config(64), 3);
  const reward::RewardNet net({64, 128, 64}, 4);
  const reward::EmbeddingRewardScorer scorer(model, net);
  const auto prompt = reward::question_tokens(vocab(), gold()[0].context);
  decode::DecodeParams params;
  params.candidates = std::size_t(state.range(0));
  params.max_length = 20;
  for (auto _ : state) benchmark::DoNotOptimize(decode::decode_with_rewards(model, vocab(), scorer, prompt, params));
}
BENCHMARK(BM_RewardDecode)->Arg(1)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_RewardScoreBatch(benchmark::State& state) {
  const reward::RewardNet net({64, 128, 64}, 5);
  const auto n = std::size_t(state.range(0));
  auto inputs = nn::Tensor::matrix(n, 128);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 128; ++j) inputs.at(i, j) = double((i * 31 + j * 7) % 17) / 17.0 - 0.5;
  }
  for (auto _ : state) benchmark::DoNotOptimize(net.score_batch(inputs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RewardScoreBatch)->Arg(32)->Arg(540);

void BM_CorpusBleu(benchmark::State& state) {
  std::vector<std::string> candidates;
  std::vector<std::vector<std::string>> refs;
  for (std::size_t i = 0; i < gold().size(); ++i) {
    candidates.push_back(gold()[i].response);
    refs.push_back({gold()[(i + 3) % gold().size()].response, gold()[i].response});
  }
  for (auto _ : state) benchmark::DoNotOptimize(eval::bleu(candidates, refs));
}
BENCHMARK(BM_CorpusBleu)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
