#include "paln/reward/reward_net.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "paln/error.hpp"
#include "paln/nn/checkpoint.hpp"
#include "paln/nn/ops.hpp"
#include "paln/nn/optim.hpp"
#include "paln/random.hpp"

namespace paln::reward {

using nn::ParamKind;
using nn::Tape;
using nn::Var;

namespace {

constexpr double kScoreFloor = std::numeric_limits<double>::min();
constexpr double kScoreCeiling = 1.0 - 0x1.0p-53;

/// P(good) from two logits without forming exp of a large number.
double good_probability(double bad_logit, double good_logit) {
  const double margin = good_logit - bad_logit;
  const double p = margin >= 0.0 ? 1.0 / (1.0 + std::exp(-margin)) : std::exp(margin) / (1.0 + std::exp(margin));
  return std::clamp(p, kScoreFloor, kScoreCeiling);
}

nn::Tensor stack_inputs(std::span<const EmbeddedExample> examples, std::span<const std::size_t> rows, std::size_t width) {
  nn::Tensor out = nn::Tensor::matrix(rows.size(), 2 * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& e = examples[rows[r]];
    if (e.question.size() != width || e.answer.size() != width) {
      throw InvalidInput("reward: embedding width mismatch (expected " + std::to_string(width) + ")");
    }
    auto dst = out.row(r);
    std::copy(e.question.begin(), e.question.end(), dst.begin());
    std::copy(e.answer.begin(), e.answer.end(), dst.begin() + std::ptrdiff_t(width));
  }
  return out;
}

}  // namespace

RewardNet::RewardNet(RewardConfig config, std::uint64_t seed) : config_(config) {
  if (config_.embedding_width < 1 || config_.hidden1 < 1 || config_.hidden2 < 1) {
    throw InvalidInput("RewardConfig: widths must be >= 1");
  }
  const std::size_t in = 2 * config_.embedding_width;
  params_.push_back(nn::make_parameter("w1", ParamKind::weight, {in, config_.hidden1}));
  params_.push_back(nn::make_parameter("b1", ParamKind::bias, {config_.hidden1}));
  params_.push_back(nn::make_parameter("w2", ParamKind::weight, {config_.hidden1, config_.hidden2}));
  params_.push_back(nn::make_parameter("b2", ParamKind::bias, {config_.hidden2}));
  params_.push_back(nn::make_parameter("w3", ParamKind::weight, {config_.hidden2, 2}));
  params_.push_back(nn::make_parameter("b3", ParamKind::bias, {2}));
  // He initialisation for the ReLU layers.
  Rng rng(seed);
  for (auto& p : params_) {
    if (p.kind != ParamKind::weight) continue;
    const double sd = std::sqrt(2.0 / double(p.value.rows()));
    for (auto& w : p.value.data()) w = sd * rng.normal();
  }
}

RewardNet RewardNet::zeros(RewardConfig config) {
  RewardNet net(config, 0);
  for (auto& p : net.params_) p.value.fill(0.0);
  return net;
}

template <typename Self>
Var RewardNet::forward_impl(Self& self, Tape& tape, Var inputs) {
  auto bind = [&](std::size_t i) { return tape.parameter(self.params_[i]); };
  Var h = nn::relu(tape, nn::linear(tape, inputs, bind(0), bind(1)));
  h = nn::relu(tape, nn::linear(tape, h, bind(2), bind(3)));
  return nn::linear(tape, h, bind(4), bind(5));
}

Var RewardNet::forward(Tape& tape, Var inputs) { return forward_impl(*this, tape, inputs); }
Var RewardNet::forward(Tape& tape, Var inputs) const { return forward_impl(*this, tape, inputs); }

std::vector<double> RewardNet::score_batch(const nn::Tensor& inputs) const {
  if (inputs.cols() != 2 * config_.embedding_width) throw InvalidInput("reward: input width mismatch");
  Tape tape(false);
  const auto& logits = tape.value(forward(tape, tape.constant(inputs)));
  std::vector<double> out(logits.rows());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = good_probability(logits.at(r, 0), logits.at(r, kGoodClass));
  return out;
}

double RewardNet::score(std::span<const double> question, std::span<const double> answer) const {
  const std::size_t d = config_.embedding_width;
  if (question.size() != d || answer.size() != d) {
    throw InvalidInput("reward: embeddings must have length " + std::to_string(d));
  }
  nn::Tensor in = nn::Tensor::matrix(1, 2 * d);
  std::copy(question.begin(), question.end(), in.data().begin());
  std::copy(answer.begin(), answer.end(), in.data().begin() + std::ptrdiff_t(d));
  return score_batch(in).front();
}

void RewardNet::save(const std::filesystem::path& path) const {
  nlohmann::json meta = {{"kind", "reward_net"},
                         {"config",
                          {{"embedding_width", config_.embedding_width},
                           {"hidden1", config_.hidden1},
                           {"hidden2", config_.hidden2}}}};
  auto sidecar = path;
  sidecar += ".json";
  nn::save_checkpoint(path, nn::to_named(params_));
  nn::write_file_atomic(sidecar, meta.dump(2) + "\n");
}

RewardNet RewardNet::load(const std::filesystem::path& path) {
  auto sidecar = path;
  sidecar += ".json";
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(nn::read_file(sidecar));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad reward sidecar " + sidecar.string() + ": " + e.what());
  }
  if (meta.value("kind", "") != "reward_net") throw FormatError(sidecar.string() + " is not a reward net");
  RewardConfig cfg;
  cfg.embedding_width = meta.at("config").at("embedding_width");
  cfg.hidden1 = meta.at("config").at("hidden1");
  cfg.hidden2 = meta.at("config").at("hidden2");
  RewardNet net(cfg, 0);
  nn::assign_named(net.params_, nn::load_checkpoint(path));
  return net;
}

text::TokenSeq question_tokens(const text::Vocabulary& vocab, std::string_view question) {
  return text::encode_prompt(vocab, question);
}

text::TokenSeq answer_tokens(const text::Vocabulary& vocab, std::string_view answer) {
  auto ids = vocab.encode(answer);
  ids.push_back(vocab.eos());
  return ids;
}

std::vector<EmbeddedExample> embed_examples(const lm::LmModel& model, const text::Vocabulary& vocab,
                                            std::span<const train::PreferenceExample> examples) {
  std::vector<EmbeddedExample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    out.push_back({model.sentence_embedding(question_tokens(vocab, e.question)),
                   model.sentence_embedding(answer_tokens(vocab, e.answer)), e.score});
  }
  return out;
}

std::vector<EmbeddedExample> embed_examples(const lm::LmModel& model, const text::Vocabulary& vocab,
                                            std::span<const train::DialogPair> gold) {
  std::vector<train::PreferenceExample> examples;
  examples.reserve(gold.size());
  for (const auto& g : gold) examples.push_back({g.context, g.response, 1.0});
  return embed_examples(model, vocab, examples);
}

double precision(const RewardNet& net, std::span<const EmbeddedExample> examples, double threshold) {
  if (examples.empty()) throw InvalidInput("precision: empty example set");
  std::vector<std::size_t> rows(examples.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const auto scores = net.score_batch(stack_inputs(examples, rows, net.config().embedding_width));
  std::size_t agree = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if ((scores[i] >= threshold) == (examples[i].score >= threshold)) ++agree;
  }
  return double(agree) / double(examples.size());
}

std::vector<PrecisionPoint> train_reward(RewardNet& net, std::span<const EmbeddedExample> train_set,
                                         std::span<const EmbeddedExample> validation_set,
                                         const RewardTrainConfig& config, const EpochCallback& on_epoch) {
  if (train_set.empty()) throw InvalidInput("train_reward: empty dataset");
  if (config.batch_size < 1) throw InvalidInput("train_reward: batch size must be >= 1");
  for (const auto& e : train_set) {
    if (!(e.score >= 0.0 && e.score <= 1.0)) throw InvalidInput("train_reward: score outside [0, 1]");
  }
  const std::size_t width = net.config().embedding_width;
  nn::AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  nn::OptimizerState opt(adam, net.parameters());

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<PrecisionPoint> curve;
  curve.reserve(config.epochs);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, epoch));
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto rows = std::span<const std::size_t>(order).subspan(start, std::min(config.batch_size, order.size() - start));
      nn::Tensor targets = nn::Tensor::matrix(rows.size(), 2);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        targets.at(r, kGoodClass) = train_set[rows[r]].score;
        targets.at(r, 1 - kGoodClass) = 1.0 - train_set[rows[r]].score;
      }
      nn::zero_grads(net.parameters());
      Tape tape;
      Var logits = net.forward(tape, tape.constant(stack_inputs(train_set, rows, width)));
      Var loss = nn::scale(tape, nn::soft_cross_entropy(tape, logits, targets), 1.0 / double(rows.size()));
      epoch_loss += tape.value(loss)[0] * double(rows.size());
      tape.backward(loss);
      nn::adam_step(opt, net.parameters());
    }
    PrecisionPoint point{epoch, epoch_loss / double(train_set.size()), precision(net, train_set), std::nullopt};
    if (!validation_set.empty()) point.val_precision = precision(net, validation_set);
    if (on_epoch) on_epoch(point);
    curve.push_back(point);
  }
  return curve;
}

std::string precision_csv(std::span<const PrecisionPoint> curve) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_precision,val_precision\n";
  for (const auto& p : curve) {
    out << p.epoch << ',' << p.train_precision << ',';
    if (p.val_precision) out << *p.val_precision;
    out << '\n';
  }
  return out.str();
}

EmbeddingRewardScorer::EmbeddingRewardScorer(const lm::LmModel& model, const RewardNet& net) : model_(model), net_(net) {
  if (net.config().embedding_width != model.config().d_model) {
    throw InvalidInput("reward net width does not match the language model's d_model");
  }
}

double EmbeddingRewardScorer::score(std::span<const text::TokenId> prompt, std::span<const text::TokenId> candidate) const {
  return net_.score(model_.sentence_embedding(prompt), model_.sentence_embedding(candidate));
}

}  // namespace paln::reward
