#pragma once

#include <nlohmann/json.hpp>

#include "paln/decode/decoding.hpp"
#include "paln/lm/model.hpp"
#include "paln/reward/reward_net.hpp"
#include "paln/train/finetune.hpp"

namespace paln::service {

// Strict readers: fields not present keep the value from `base`; unknown
// keys, wrong types and out-of-range values raise InvalidInput.
train::TrainConfig train_config_from_json(const nlohmann::json& j, train::TrainConfig base);
decode::DecodeParams decode_params_from_json(const nlohmann::json& j, decode::DecodeParams base);
reward::RewardTrainConfig reward_config_from_json(const nlohmann::json& j, reward::RewardTrainConfig base);
/// Architecture fields only; vocab_size comes from the vocabulary.
lm::LmConfig lm_config_from_json(const nlohmann::json& j, lm::LmConfig base);

nlohmann::json to_json(const train::TrainConfig& c);
nlohmann::json to_json(const decode::DecodeParams& p);
nlohmann::json to_json(const reward::RewardTrainConfig& c);
nlohmann::json to_json(const lm::LmConfig& c);

/// Checks that every key of object `j` is in `known`; `where` names the
/// object in the error message.
void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known, std::string_view where);

}  // namespace paln::service
