#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "paln/nn/tensor.hpp"

namespace paln::nn {

enum class Schedule { none, noam };

Schedule parse_schedule(std::string_view name);
std::string_view to_string(Schedule schedule);

struct AdamConfig {
  double learning_rate = 1e-3;
  Schedule schedule = Schedule::none;
  long warmup_steps = 200;
  long d_model = 64;
  double l1_factor = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam moments plus the schedule and L1 settings they are updated under.
struct OptimizerState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  OptimizerState() = default;
  OptimizerState(AdamConfig cfg, std::span<const Parameter> params);

  /// Learning rate the next update will use.
  double next_learning_rate() const;
};

/// One Adam update from the gradients stored on `params`. When
/// config.l1_factor > 0, lambda * sign(w) is first added to each weight
/// gradient. Gradients are left in place; callers zero them.
void adam_step(OptimizerState& state, std::span<Parameter> params);

}  // namespace paln::nn
