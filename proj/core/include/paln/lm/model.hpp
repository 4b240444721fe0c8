#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "paln/lm/next_token_model.hpp"
#include "paln/nn/tape.hpp"

namespace paln::lm {

struct LmConfig {
  std::size_t vocab_size = 512;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t max_context = 256;
  std::size_t ff_width = 256;
  bool tie_weights = true;

  void validate() const;
};

/// Decoder-only transformer with pre-layer-norm residual blocks and learned
/// positional embeddings. The output head is tied to the token table unless
/// config.tie_weights is false.
class LmModel final : public NextTokenModel {
 public:
  LmModel(LmConfig config, std::uint64_t seed);

  const LmConfig& config() const noexcept { return config_; }

  std::size_t vocab_size() const override { return config_.vocab_size; }
  /// EOS is the last id of the vocabulary the model was built for.
  TokenId eos() const override { return TokenId(config_.vocab_size - 1); }
  std::size_t max_context() const override { return config_.max_context; }

  /// Records a forward pass; returns logits [n, V], or [1, V] for the last
  /// position only.
  nn::Var forward(nn::Tape& tape, std::span<const TokenId> context, bool last_only = false);
  nn::Var forward(nn::Tape& tape, std::span<const TokenId> context, bool last_only = false) const;

  std::vector<double> logits_last(std::span<const TokenId> context) const override;
  nn::Tensor logits_all(std::span<const TokenId> context) const override;

  /// Elementwise sum of token-embedding rows (no positional term); exact
  /// rounding per dimension, so the result is order independent.
  std::vector<double> sentence_embedding(std::span<const TokenId> ids) const;

  std::span<nn::Parameter> parameters() noexcept { return params_; }
  std::span<const nn::Parameter> parameters() const noexcept { return params_; }
  nn::Parameter& token_embedding() { return params_[tok_emb_]; }
  const nn::Parameter& token_embedding() const { return params_[tok_emb_]; }
  /// The tensor the output head multiplies by (the token table when tied).
  nn::Parameter& output_projection() { return params_[config_.tie_weights ? tok_emb_ : head_]; }

  /// Training phases this parameter set has been through, oldest first.
  const std::vector<std::string>& lineage() const noexcept { return lineage_; }
  void append_lineage(std::string tag) { lineage_.push_back(std::move(tag)); }
  bool has_lineage(std::string_view tag) const;

  /// Writes the tensor container to `path` and a JSON sidecar
  /// `path + ".json"` holding config, lineage and the vocabulary reference.
  void save(const std::filesystem::path& path, const std::string& vocab_ref = "") const;
  static LmModel load(const std::filesystem::path& path, std::string* vocab_ref = nullptr);

 private:
  struct Block {
    std::size_t ln1_gain, ln1_bias;
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln2_gain, ln2_bias;
    std::size_t w1, b1, w2, b2;
  };

  std::size_t add_param(std::string name, nn::ParamKind kind, nn::Shape shape);

  template <typename Self>
  static nn::Var forward_impl(Self& self, nn::Tape& tape, std::span<const TokenId> context, bool last_only);

  LmConfig config_;
  std::vector<nn::Parameter> params_;
  std::size_t tok_emb_ = 0;
  std::size_t pos_emb_ = 0;
  std::vector<Block> blocks_;
  std::size_t lnf_gain_ = 0;
  std::size_t lnf_bias_ = 0;
  std::size_t head_ = 0;
  std::vector<std::string> lineage_;
};

}  // namespace paln::lm
