#include "paln/service/config.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>

#include "paln/error.hpp"

namespace paln::service {
namespace {

using nlohmann::json;

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  const std::string name = std::string("'") + key + "'";
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw InvalidInput(name + " must be a boolean");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number() || !std::isfinite(v.get<double>())) throw InvalidInput(name + " must be a finite number");
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!v.is_number_unsigned()) throw InvalidInput(name + " must be a non-negative integer");
  } else {
    if (!v.is_number_integer()) throw InvalidInput(name + " must be an integer");
  }
  out = v.get<T>();
}

void require_object(const json& j, std::string_view where) {
  if (!j.is_object()) throw InvalidInput(std::string(where) + " must be a JSON object");
}

}  // namespace

void require_known_keys(const json& j, std::initializer_list<std::string_view> known, std::string_view where) {
  require_object(j, where);
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw InvalidInput("unknown field '" + key + "' in " + std::string(where));
    }
  }
}

train::TrainConfig train_config_from_json(const json& j, train::TrainConfig c) {
  require_known_keys(j, {"batch_size", "learning_rate", "schedule", "warmup_steps", "epochs", "l1_factor", "seed"},
                     "train config");
  read(j, "batch_size", c.batch_size);
  read(j, "learning_rate", c.learning_rate);
  if (j.contains("schedule")) {
    if (!j.at("schedule").is_string()) throw InvalidInput("'schedule' must be a string");
    c.schedule = nn::parse_schedule(j.at("schedule").get<std::string>());
  }
  read(j, "warmup_steps", c.warmup_steps);
  read(j, "epochs", c.epochs);
  read(j, "l1_factor", c.l1_factor);
  read(j, "seed", c.seed);
  c.validate();
  return c;
}

decode::DecodeParams decode_params_from_json(const json& j, decode::DecodeParams p) {
  require_known_keys(j, {"temperature", "max_length", "candidates", "top_k", "top_p", "beam_width", "seed"},
                     "decode params");
  read(j, "temperature", p.temperature);
  read(j, "max_length", p.max_length);
  read(j, "candidates", p.candidates);
  read(j, "top_k", p.top_k);
  read(j, "top_p", p.top_p);
  read(j, "beam_width", p.beam_width);
  read(j, "seed", p.seed);
  p.validate();
  return p;
}

reward::RewardTrainConfig reward_config_from_json(const json& j, reward::RewardTrainConfig c) {
  require_known_keys(j, {"epochs", "learning_rate", "batch_size", "seed"}, "reward config");
  read(j, "epochs", c.epochs);
  read(j, "learning_rate", c.learning_rate);
  read(j, "batch_size", c.batch_size);
  read(j, "seed", c.seed);
  if (c.epochs < 1) throw InvalidInput("reward epochs must be >= 1");
  if (c.batch_size < 1) throw InvalidInput("reward batch_size must be >= 1");
  if (c.learning_rate < 0.0) throw InvalidInput("reward learning_rate must be >= 0");
  return c;
}

lm::LmConfig lm_config_from_json(const json& j, lm::LmConfig c) {
  require_known_keys(j, {"d_model", "n_layers", "n_heads", "max_context", "ff_width", "tie_weights"}, "model config");
  read(j, "d_model", c.d_model);
  read(j, "n_layers", c.n_layers);
  read(j, "n_heads", c.n_heads);
  read(j, "max_context", c.max_context);
  read(j, "ff_width", c.ff_width);
  read(j, "tie_weights", c.tie_weights);
  c.validate();
  return c;
}

json to_json(const train::TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"learning_rate", c.learning_rate}, {"schedule", nn::to_string(c.schedule)},
          {"warmup_steps", c.warmup_steps}, {"epochs", c.epochs}, {"l1_factor", c.l1_factor}, {"seed", c.seed}};
}

json to_json(const decode::DecodeParams& p) {
  return {{"temperature", p.temperature}, {"max_length", p.max_length}, {"candidates", p.candidates},
          {"top_k", p.top_k},             {"top_p", p.top_p},           {"beam_width", p.beam_width},
          {"seed", p.seed}};
}

json to_json(const reward::RewardTrainConfig& c) {
  return {{"epochs", c.epochs}, {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"seed", c.seed}};
}

json to_json(const lm::LmConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},   {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"max_context", c.max_context}, {"ff_width", c.ff_width},
          {"tie_weights", c.tie_weights}};
}

}  // namespace paln::service
