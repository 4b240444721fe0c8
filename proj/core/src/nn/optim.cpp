#include "paln/nn/optim.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "paln/error.hpp"
#include "paln/nn/functional.hpp"

namespace paln::nn {

Schedule parse_schedule(std::string_view name) {
  if (name == "none") return Schedule::none;
  if (name == "noam") return Schedule::noam;
  throw InvalidInput("unknown schedule '" + std::string(name) + "' (expected none|noam)");
}

std::string_view to_string(Schedule schedule) { return schedule == Schedule::noam ? "noam" : "none"; }

OptimizerState::OptimizerState(AdamConfig cfg, std::span<const Parameter> params) : config(cfg) {
  first_moment.reserve(params.size());
  second_moment.reserve(params.size());
  for (const auto& p : params) {
    first_moment.emplace_back(p.value.size(), 0.0);
    second_moment.emplace_back(p.value.size(), 0.0);
  }
}

double OptimizerState::next_learning_rate() const {
  if (config.schedule == Schedule::noam) return noam_lr(long(step + 1), config.d_model, config.warmup_steps);
  return config.learning_rate;
}

void adam_step(OptimizerState& state, std::span<Parameter> params) {
  if (params.size() != state.first_moment.size()) {
    throw InvalidInput("adam_step: optimizer tracks " + std::to_string(state.first_moment.size()) +
                       " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].value.has_grad() || params[i].value.size() != state.first_moment[i].size()) {
      throw InvalidInput("adam_step: gradient/moment shape mismatch for " + params[i].name);
    }
  }
  const auto& cfg = state.config;
  add_l1_gradient(params, cfg.l1_factor);

  const double lr = state.next_learning_rate();
  ++state.step;
  const double t = double(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value.data();
    auto g = std::as_const(params[i].value).grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

}  // namespace paln::nn
