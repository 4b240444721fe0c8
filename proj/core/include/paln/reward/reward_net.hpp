#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "paln/decode/decoding.hpp"
#include "paln/lm/model.hpp"
#include "paln/nn/tape.hpp"
#include "paln/train/dataset.hpp"

namespace paln::reward {

struct RewardConfig {
  std::size_t embedding_width = 64;  ///< d_model of the language model
  std::size_t hidden1 = 128;
  std::size_t hidden2 = 64;
};

/// Index of the "good answer" class in the two-way output.
inline constexpr std::size_t kGoodClass = 1;

/// Feed-forward scorer for (question, answer) sentence embeddings:
/// concat(q, a) -> ReLU -> ReLU -> 2-way softmax. The score is the
/// probability of the good class.
class RewardNet {
 public:
  RewardNet(RewardConfig config, std::uint64_t seed);
  /// Every weight and bias zero; scores 0.5 everywhere.
  static RewardNet zeros(RewardConfig config);

  const RewardConfig& config() const noexcept { return config_; }

  /// inputs [n, 2 * embedding_width] -> logits [n, 2].
  nn::Var forward(nn::Tape& tape, nn::Var inputs);
  nn::Var forward(nn::Tape& tape, nn::Var inputs) const;

  /// Probability of the good class, kept strictly inside (0, 1).
  double score(std::span<const double> question, std::span<const double> answer) const;
  /// Scores for rows of a [n, 2 * embedding_width] input matrix.
  std::vector<double> score_batch(const nn::Tensor& inputs) const;

  std::span<nn::Parameter> parameters() noexcept { return params_; }
  std::span<const nn::Parameter> parameters() const noexcept { return params_; }

  void save(const std::filesystem::path& path) const;
  static RewardNet load(const std::filesystem::path& path);

 private:
  template <typename Self>
  static nn::Var forward_impl(Self& self, nn::Tape& tape, nn::Var inputs);

  RewardConfig config_;
  std::vector<nn::Parameter> params_;
};

/// Question and answer already mapped to sentence embeddings.
struct EmbeddedExample {
  std::vector<double> question;
  std::vector<double> answer;
  double score = 0.0;
};

/// Token sequences the reward sees: the question as a decoding prompt
/// (turns + SEP) and the answer as a terminated response (text + EOS).
text::TokenSeq question_tokens(const text::Vocabulary& vocab, std::string_view question);
text::TokenSeq answer_tokens(const text::Vocabulary& vocab, std::string_view answer);

std::vector<EmbeddedExample> embed_examples(const lm::LmModel& model, const text::Vocabulary& vocab,
                                            std::span<const train::PreferenceExample> examples);
std::vector<EmbeddedExample> embed_examples(const lm::LmModel& model, const text::Vocabulary& vocab,
                                            std::span<const train::DialogPair> gold);

/// Fraction of examples where (score >= threshold) agrees with
/// (label >= threshold).
double precision(const RewardNet& net, std::span<const EmbeddedExample> examples, double threshold = 0.5);

struct RewardTrainConfig {
  std::size_t epochs = 1000;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct PrecisionPoint {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_precision = 0.0;
  std::optional<double> val_precision;
};

using EpochCallback = std::function<void(const PrecisionPoint&)>;

/// Adam on soft-target cross-entropy: target (1 - score, score) against the
/// two-way softmax. Emits train/validation precision after every epoch.
std::vector<PrecisionPoint> train_reward(RewardNet& net, std::span<const EmbeddedExample> train_set,
                                         std::span<const EmbeddedExample> validation_set,
                                         const RewardTrainConfig& config, const EpochCallback& on_epoch = {});

/// CSV "epoch,train_precision,val_precision".
std::string precision_csv(std::span<const PrecisionPoint> curve);

/// Scores candidates with a reward net over the language model's sentence
/// embeddings of prompt and candidate.
class EmbeddingRewardScorer final : public decode::CandidateScorer {
 public:
  EmbeddingRewardScorer(const lm::LmModel& model, const RewardNet& net);
  double score(std::span<const text::TokenId> prompt, std::span<const text::TokenId> candidate) const override;

 private:
  const lm::LmModel& model_;
  const RewardNet& net_;
};

}  // namespace paln::reward
