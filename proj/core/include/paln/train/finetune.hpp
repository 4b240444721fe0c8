#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "paln/decode/decoding.hpp"
#include "paln/lm/model.hpp"
#include "paln/nn/optim.hpp"
#include "paln/train/dataset.hpp"

namespace paln::train {

/// The two fine-tuning stages. Phase 2 (closed-domain) only runs on a
/// parameter set whose lineage already contains phase 1.
enum class Phase { base_corpus, closed_domain };

std::string_view lineage_tag(Phase phase);

struct TrainConfig {
  std::size_t batch_size = 1;
  double learning_rate = 1e-5;
  nn::Schedule schedule = nn::Schedule::none;
  long warmup_steps = 200;
  double epochs = 1.0;  ///< fractional: floor(epochs * steps_per_epoch) updates
  double l1_factor = 0.0;
  std::uint64_t seed = 0;

  void validate() const;

  /// Base-corpus phase defaults: batch 64, lr 1e-5, Noam (warmup 200),
  /// 2.5 epochs, L1 0.01.
  static TrainConfig base_corpus_defaults();
  /// Closed-domain phase defaults: batch 1, lr 1e-5, no schedule,
  /// 2 epochs, L1 0.001.
  static TrainConfig closed_domain_defaults();
};

/// Inputs, next-token targets and loss weights for one dialogue. Weights are
/// 1 where the target is a response token (or EOS) and 0 on context.
struct TrainingSequence {
  text::TokenSeq inputs;
  std::vector<int> targets;
  std::vector<double> weights;
};

/// Encodes context SEP response EOS. If it does not fit `max_context`
/// inputs, context tokens are dropped from the left; a response that alone
/// does not fit is an error.
TrainingSequence make_training_sequence(const text::Vocabulary& vocab, const DialogPair& pair, std::size_t max_context);

struct LossPoint {
  std::size_t step = 0;
  double loss = 0.0;  ///< mean cross-entropy per response token (nats)
  double l1 = 0.0;    ///< L1 penalty term at this step
  double lr = 0.0;
};

using StepCallback = std::function<void(const LossPoint&, std::size_t total_steps)>;

std::size_t total_steps(std::size_t examples, const TrainConfig& config);

/// Minimises response-token cross-entropy + L1 with Adam. Appends the phase
/// tag to the model lineage on success and returns one point per update.
std::vector<LossPoint> finetune_lm(lm::LmModel& model, const text::Vocabulary& vocab, std::span<const DialogPair> pairs,
                                   const TrainConfig& config, Phase phase, const StepCallback& on_step = {});

/// Mean response-token cross-entropy of a batch, recorded on `tape`.
nn::Var batch_loss(nn::Tape& tape, lm::LmModel& model, std::span<const TrainingSequence> batch);

/// CSV "step,loss,lr".
std::string loss_csv(std::span<const LossPoint> curve);

/// Redraws allowed per slot when a sample is blank or copies the reference.
inline constexpr std::size_t kCandidateRedraws = 64;

/// k answers per question from plain temperature sampling (no top-k/top-p);
/// the answer to question i, draw j uses stream derive_seed(seed, i * k + j).
/// Blank answers, and answers identical to `references[i]` when references
/// are given, are redrawn from derive_seed(stream, attempt): the reference
/// already enters the preference set with score 1.0, so a copy would be
/// wasted annotation work.
std::vector<DialogPair> generate_preference_candidates(const lm::LmModel& model, const text::Vocabulary& vocab,
                                                       std::span<const std::string> questions, std::size_t k,
                                                       const decode::DecodeParams& params,
                                                       std::span<const std::string> references = {});

}  // namespace paln::train
