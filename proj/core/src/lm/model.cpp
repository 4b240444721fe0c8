#include "paln/lm/model.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

#include "paln/error.hpp"
#include "paln/nn/checkpoint.hpp"
#include "paln/nn/functional.hpp"
#include "paln/nn/ops.hpp"
#include "paln/random.hpp"

namespace paln::lm {

using nn::ParamKind;
using nn::Tape;
using nn::Var;

void LmConfig::validate() const {
  if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || max_context < 1 || ff_width < 1) {
    throw InvalidInput("LmConfig: every dimension must be >= 1");
  }
  if (d_model % n_heads != 0) throw InvalidInput("LmConfig: d_model must be divisible by n_heads");
}

std::size_t LmModel::add_param(std::string name, ParamKind kind, nn::Shape shape) {
  params_.push_back(nn::make_parameter(std::move(name), kind, std::move(shape), kind == ParamKind::gain ? 1.0 : 0.0));
  return params_.size() - 1;
}

LmModel::LmModel(LmConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  tok_emb_ = add_param("tok_emb", ParamKind::weight, {config_.vocab_size, d});
  pos_emb_ = add_param("pos_emb", ParamKind::weight, {config_.max_context, d});
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    Block b{};
    b.ln1_gain = add_param(p + "ln1.gain", ParamKind::gain, {d});
    b.ln1_bias = add_param(p + "ln1.bias", ParamKind::bias, {d});
    b.wq = add_param(p + "attn.wq", ParamKind::weight, {d, d});
    b.bq = add_param(p + "attn.bq", ParamKind::bias, {d});
    b.wk = add_param(p + "attn.wk", ParamKind::weight, {d, d});
    b.bk = add_param(p + "attn.bk", ParamKind::bias, {d});
    b.wv = add_param(p + "attn.wv", ParamKind::weight, {d, d});
    b.bv = add_param(p + "attn.bv", ParamKind::bias, {d});
    b.wo = add_param(p + "attn.wo", ParamKind::weight, {d, d});
    b.bo = add_param(p + "attn.bo", ParamKind::bias, {d});
    b.ln2_gain = add_param(p + "ln2.gain", ParamKind::gain, {d});
    b.ln2_bias = add_param(p + "ln2.bias", ParamKind::bias, {d});
    b.w1 = add_param(p + "ff.w1", ParamKind::weight, {d, config_.ff_width});
    b.b1 = add_param(p + "ff.b1", ParamKind::bias, {config_.ff_width});
    b.w2 = add_param(p + "ff.w2", ParamKind::weight, {config_.ff_width, d});
    b.b2 = add_param(p + "ff.b2", ParamKind::bias, {d});
    blocks_.push_back(b);
  }
  lnf_gain_ = add_param("lnf.gain", ParamKind::gain, {d});
  lnf_bias_ = add_param("lnf.bias", ParamKind::bias, {d});
  if (!config_.tie_weights) head_ = add_param("head", ParamKind::weight, {d, config_.vocab_size});

  // GPT-2 style init: N(0, 0.02), residual output projections scaled down by
  // sqrt(2 * layers).
  Rng rng(seed);
  const double residual_std = 0.02 / std::sqrt(2.0 * double(config_.n_layers));
  for (auto& p : params_) {
    if (p.kind != ParamKind::weight) continue;
    const bool residual = p.name.ends_with("attn.wo") || p.name.ends_with("ff.w2");
    const double sd = residual ? residual_std : 0.02;
    for (auto& w : p.value.data()) w = sd * rng.normal();
  }
}

template <typename Self>
Var LmModel::forward_impl(Self& self, Tape& tape, std::span<const TokenId> context, bool last_only) {
  const auto& cfg = self.config_;
  if (context.empty()) throw InvalidInput("language model: empty context");
  if (context.size() > cfg.max_context) {
    throw InvalidInput("language model: context of " + std::to_string(context.size()) + " tokens exceeds max_context " +
                       std::to_string(cfg.max_context));
  }
  auto bind = [&](std::size_t idx) { return tape.parameter(self.params_[idx]); };

  std::vector<int> positions(context.size());
  std::iota(positions.begin(), positions.end(), 0);
  Var h = nn::add(tape, nn::embedding(tape, bind(self.tok_emb_), context), nn::embedding(tape, bind(self.pos_emb_), positions));

  for (const auto& b : self.blocks_) {
    Var x = nn::layer_norm(tape, h, bind(b.ln1_gain), bind(b.ln1_bias));
    Var q = nn::linear(tape, x, bind(b.wq), bind(b.bq));
    Var k = nn::linear(tape, x, bind(b.wk), bind(b.bk));
    Var v = nn::linear(tape, x, bind(b.wv), bind(b.bv));
    Var a = nn::causal_attention(tape, q, k, v, cfg.n_heads);
    h = nn::add(tape, h, nn::linear(tape, a, bind(b.wo), bind(b.bo)));

    x = nn::layer_norm(tape, h, bind(b.ln2_gain), bind(b.ln2_bias));
    Var f = nn::relu(tape, nn::linear(tape, x, bind(b.w1), bind(b.b1)));
    h = nn::add(tape, h, nn::linear(tape, f, bind(b.w2), bind(b.b2)));
  }
  if (last_only) h = nn::last_row(tape, h);
  h = nn::layer_norm(tape, h, bind(self.lnf_gain_), bind(self.lnf_bias_));
  if (cfg.tie_weights) return nn::matmul_transposed(tape, h, bind(self.tok_emb_));
  return nn::linear(tape, h, bind(self.head_));
}

Var LmModel::forward(Tape& tape, std::span<const TokenId> context, bool last_only) {
  return forward_impl(*this, tape, context, last_only);
}

Var LmModel::forward(Tape& tape, std::span<const TokenId> context, bool last_only) const {
  return forward_impl(*this, tape, context, last_only);
}

std::vector<double> LmModel::logits_last(std::span<const TokenId> context) const {
  Tape tape(false);
  const auto& out = tape.value(forward(tape, context, true));
  return {out.data().begin(), out.data().end()};
}

nn::Tensor LmModel::logits_all(std::span<const TokenId> context) const {
  Tape tape(false);
  return tape.value(forward(tape, context, false));
}

std::vector<double> LmModel::sentence_embedding(std::span<const TokenId> ids) const {
  const auto& table = params_[tok_emb_].value;
  const std::size_t d = config_.d_model;
  for (TokenId id : ids) {
    if (id < 0 || std::size_t(id) >= config_.vocab_size) {
      throw InvalidInput("sentence_embedding: token id " + std::to_string(id) + " out of range");
    }
  }
  std::vector<double> out(d, 0.0);
  std::vector<double> column(ids.size());
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < ids.size(); ++i) column[i] = table.at(std::size_t(ids[i]), c);
    out[c] = nn::exact_sum(column);
  }
  return out;
}

bool LmModel::has_lineage(std::string_view tag) const {
  return std::find(lineage_.begin(), lineage_.end(), tag) != lineage_.end();
}

void LmModel::save(const std::filesystem::path& path, const std::string& vocab_ref) const {
  nlohmann::json meta;
  meta["kind"] = "language_model";
  meta["config"] = {{"vocab_size", config_.vocab_size}, {"d_model", config_.d_model},
                    {"n_layers", config_.n_layers},     {"n_heads", config_.n_heads},
                    {"max_context", config_.max_context}, {"ff_width", config_.ff_width},
                    {"tie_weights", config_.tie_weights}};
  meta["vocab"] = vocab_ref;
  meta["lineage"] = lineage_;
  auto sidecar = path;
  sidecar += ".json";
  // Tensors first: a sidecar is only ever visible next to a complete checkpoint.
  nn::save_checkpoint(path, nn::to_named(params_));
  nn::write_file_atomic(sidecar, meta.dump(2) + "\n");
}

LmModel LmModel::load(const std::filesystem::path& path, std::string* vocab_ref) {
  auto sidecar = path;
  sidecar += ".json";
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(nn::read_file(sidecar));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad model sidecar " + sidecar.string() + ": " + e.what());
  }
  if (meta.value("kind", "") != "language_model") throw FormatError(sidecar.string() + " is not a language model");
  LmConfig cfg;
  const auto& c = meta.at("config");
  cfg.vocab_size = c.at("vocab_size");
  cfg.d_model = c.at("d_model");
  cfg.n_layers = c.at("n_layers");
  cfg.n_heads = c.at("n_heads");
  cfg.max_context = c.at("max_context");
  cfg.ff_width = c.at("ff_width");
  cfg.tie_weights = c.at("tie_weights");
  LmModel model(cfg, 0);
  nn::assign_named(model.params_, nn::load_checkpoint(path));
  model.lineage_ = meta.value("lineage", std::vector<std::string>{});
  if (vocab_ref) *vocab_ref = meta.value("vocab", "");
  return model;
}

}  // namespace paln::lm
