#include "paln/nn/functional.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "paln/error.hpp"

namespace paln::nn {

double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double z = 0.0;
  for (double x : v) z += std::exp(x - mx);
  return mx + std::log(z);
}

namespace {

void check_softmax_input(std::span<const double> v) {
  if (v.empty()) throw InvalidInput("softmax: empty input");
  bool any_finite = false;
  for (double x : v) {
    if (std::isnan(x) || x == std::numeric_limits<double>::infinity()) {
      throw InvalidInput("softmax: non-finite input");
    }
    any_finite = any_finite || std::isfinite(x);
  }
  if (!any_finite) throw InvalidInput("softmax: every entry is masked");
}

}  // namespace

std::vector<double> softmax(std::span<const double> v) {
  check_softmax_input(v);
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    z += out[i];
  }
  for (auto& p : out) p /= z;
  return out;
}

std::vector<double> log_softmax(std::span<const double> v) {
  check_softmax_input(v);
  const double lse = log_sum_exp(v);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
  return out;
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw InvalidInput("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

double exact_sum(std::span<const double> values) {
  std::vector<double> partials;
  for (double x : values) {
    std::size_t used = 0;
    for (double y : partials) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[used++] = lo;
      x = hi;
    }
    partials.resize(used);
    partials.push_back(x);
  }
  // Round the partials to one double, as in Python's math.fsum.
  if (partials.empty()) return 0.0;
  std::size_t n = partials.size();
  double hi = partials[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials[--n];
    hi = x + y;
    const double yr = hi - x;
    lo = y - yr;
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

double noam_lr(long step, long d_model, long warmup) {
  if (step < 1) throw InvalidInput("noam_lr: step must be >= 1");
  if (d_model < 1 || warmup < 1) throw InvalidInput("noam_lr: d_model and warmup must be >= 1");
  const double s = double(step);
  return std::pow(double(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(double(warmup), -1.5));
}

double l1_penalty(std::span<const Parameter> params, double lambda) {
  if (lambda < 0.0) throw InvalidInput("l1_penalty: lambda must be >= 0");
  if (lambda == 0.0) return 0.0;
  double total = 0.0;
  for (const auto& p : params) {
    if (p.kind != ParamKind::weight) continue;
    for (double w : p.value.data()) total += std::abs(w);
  }
  return lambda * total;
}

void add_l1_gradient(std::span<Parameter> params, double lambda) {
  if (lambda < 0.0) throw InvalidInput("l1 gradient: lambda must be >= 0");
  if (lambda == 0.0) return;
  for (auto& p : params) {
    if (p.kind != ParamKind::weight) continue;
    auto g = p.value.grad();
    const auto w = p.value.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] > 0.0) g[i] += lambda;
      else if (w[i] < 0.0) g[i] -= lambda;
    }
  }
}

}  // namespace paln::nn
