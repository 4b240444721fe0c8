#include "paln/train/finetune.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "paln/error.hpp"
#include "paln/nn/functional.hpp"
#include "paln/nn/ops.hpp"
#include "paln/random.hpp"
#include "paln/reward/reward_net.hpp"

namespace paln::train {

std::string_view lineage_tag(Phase phase) { return phase == Phase::base_corpus ? "phase1" : "phase2"; }

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
  if (!(epochs > 0.0)) throw InvalidInput("epochs must be > 0");
  if (!(learning_rate >= 0.0)) throw InvalidInput("learning_rate must be >= 0");
  if (!(l1_factor >= 0.0)) throw InvalidInput("l1_factor must be >= 0");
  if (schedule == nn::Schedule::noam && warmup_steps < 1) throw InvalidInput("warmup_steps must be >= 1");
}

TrainConfig TrainConfig::base_corpus_defaults() {
  return TrainConfig{64, 1e-5, nn::Schedule::noam, 200, 2.5, 0.01, 0};
}

TrainConfig TrainConfig::closed_domain_defaults() {
  return TrainConfig{1, 1e-5, nn::Schedule::none, 200, 2.0, 0.001, 0};
}

TrainingSequence make_training_sequence(const text::Vocabulary& vocab, const DialogPair& pair, std::size_t max_context) {
  auto dialog = text::encode_dialog(vocab, pair.context, pair.response);
  auto& full = dialog.tokens;
  // n tokens give n - 1 (input, target) positions.
  if (full.size() > max_context + 1) {
    const std::size_t excess = full.size() - (max_context + 1);
    if (excess > dialog.response_start) {
      throw InvalidInput("response of " + std::to_string(full.size() - dialog.response_start) +
                         " tokens does not fit the context window");
    }
    full.erase(full.begin(), full.begin() + std::ptrdiff_t(excess));
    dialog.response_start -= excess;
  }
  TrainingSequence seq;
  seq.inputs.assign(full.begin(), full.end() - 1);
  seq.targets.assign(full.begin() + 1, full.end());
  seq.weights.resize(seq.targets.size());
  for (std::size_t i = 0; i < seq.targets.size(); ++i) seq.weights[i] = (i + 1 >= dialog.response_start) ? 1.0 : 0.0;
  return seq;
}

std::size_t total_steps(std::size_t examples, const TrainConfig& config) {
  const std::size_t per_epoch = (examples + config.batch_size - 1) / config.batch_size;
  return std::size_t(std::floor(config.epochs * double(per_epoch)));
}

nn::Var batch_loss(nn::Tape& tape, lm::LmModel& model, std::span<const TrainingSequence> batch) {
  double tokens = 0.0;
  std::optional<nn::Var> total;
  for (const auto& seq : batch) {
    nn::Var logits = model.forward(tape, seq.inputs);
    nn::Var ce = nn::cross_entropy(tape, logits, seq.targets, seq.weights);
    total = total ? nn::add(tape, *total, ce) : ce;
    tokens += std::accumulate(seq.weights.begin(), seq.weights.end(), 0.0);
  }
  if (!total) throw InvalidInput("batch_loss: empty batch");
  if (tokens == 0.0) throw InvalidInput("batch_loss: batch has no response tokens");
  return nn::scale(tape, *total, 1.0 / tokens);
}

std::vector<LossPoint> finetune_lm(lm::LmModel& model, const text::Vocabulary& vocab, std::span<const DialogPair> pairs,
                                   const TrainConfig& config, Phase phase, const StepCallback& on_step) {
  config.validate();
  if (pairs.empty()) throw InvalidInput("finetune_lm: empty dataset");
  if (vocab.size() != model.vocab_size()) {
    throw InvalidInput("finetune_lm: vocabulary has " + std::to_string(vocab.size()) + " tokens, model expects " +
                       std::to_string(model.vocab_size()));
  }
  if (phase == Phase::closed_domain && !model.has_lineage(lineage_tag(Phase::base_corpus))) {
    throw UsageError("closed-domain fine-tuning must start from a base-corpus (phase1) checkpoint");
  }

  std::vector<TrainingSequence> data;
  data.reserve(pairs.size());
  for (const auto& p : pairs) data.push_back(make_training_sequence(vocab, p, model.max_context()));

  nn::AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  adam.schedule = config.schedule;
  adam.warmup_steps = config.warmup_steps;
  adam.d_model = long(model.config().d_model);
  adam.l1_factor = config.l1_factor;
  nn::OptimizerState opt(adam, model.parameters());

  const std::size_t steps = total_steps(data.size(), config);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t epoch = 0;
  std::size_t cursor = order.size();

  std::vector<LossPoint> curve;
  curve.reserve(steps);
  std::vector<TrainingSequence> batch;
  for (std::size_t step = 1; step <= steps; ++step) {
    batch.clear();
    while (batch.size() < config.batch_size) {
      if (cursor == order.size()) {
        Rng rng(derive_seed(config.seed, epoch++));
        rng.shuffle(order);
        cursor = 0;
        // Batches do not straddle epochs.
        if (!batch.empty()) break;
      }
      batch.push_back(data[order[cursor++]]);
    }
    nn::zero_grads(model.parameters());
    nn::Tape tape;
    nn::Var loss = batch_loss(tape, model, batch);
    const double lr = opt.next_learning_rate();
    const double l1 = nn::l1_penalty(model.parameters(), config.l1_factor);
    LossPoint point{step, tape.value(loss)[0], l1, lr};
    tape.backward(loss);
    nn::adam_step(opt, model.parameters());
    if (on_step) on_step(point, steps);
    curve.push_back(point);
  }
  model.append_lineage(std::string(lineage_tag(phase)));
  return curve;
}

std::string loss_csv(std::span<const LossPoint> curve) {
  std::ostringstream out;
  out.precision(17);
  out << "step,loss,lr\n";
  for (const auto& p : curve) out << p.step << ',' << p.loss << ',' << p.lr << '\n';
  return out.str();
}

std::vector<DialogPair> generate_preference_candidates(const lm::LmModel& model, const text::Vocabulary& vocab,
                                                       std::span<const std::string> questions, std::size_t k,
                                                       const decode::DecodeParams& params,
                                                       std::span<const std::string> references) {
  if (k < 1) throw InvalidInput("generate_preference_candidates: k must be >= 1");
  if (!references.empty() && references.size() != questions.size()) {
    throw InvalidInput("generate_preference_candidates: one reference per question expected");
  }
  const auto sampling = params.unfiltered();
  std::vector<DialogPair> out;
  out.reserve(questions.size() * k);
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const auto prompt = reward::question_tokens(vocab, questions[i]);
    for (std::size_t j = 0; j < k; ++j) {
      const std::uint64_t stream = derive_seed(sampling.seed, i * k + j);
      std::string answer;
      for (std::size_t attempt = 0; attempt <= kCandidateRedraws; ++attempt) {
        const auto seed = attempt == 0 ? stream : derive_seed(stream, attempt);
        answer = vocab.decode(decode::sample_candidate(model, prompt, sampling, seed).tokens);
        const bool blank = answer.find_first_not_of(" \t\r\n") == std::string::npos;
        const bool copies_reference = !references.empty() && answer == references[i];
        if (!blank && !copies_reference) break;
      }
      out.push_back({questions[i], std::move(answer)});
    }
  }
  return out;
}

}  // namespace paln::train
