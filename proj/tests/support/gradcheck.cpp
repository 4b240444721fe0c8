#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "paln/lm/model.hpp"
#include "paln/nn/ops.hpp"
#include "paln/random.hpp"
#include "paln/reward/reward_net.hpp"

namespace paln::testing {
namespace {

using nn::ParamKind;
using nn::Parameter;
using nn::Tape;
using nn::Tensor;
using nn::Var;

double eval(const GradCase& c) {
  Tape tape(false);
  return tape.value(c.loss(tape))[0];
}

Tensor random_tensor(Rng& rng, nn::Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = scale * rng.normal();
  return t;
}

Parameter random_param(Rng& rng, std::string name, ParamKind kind, nn::Shape shape, double scale = 1.0) {
  Parameter p{std::move(name), kind, random_tensor(rng, std::move(shape), scale)};
  p.value.enable_grad();
  return p;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + std::size_t(rng.below(hi - lo + 1)); }

/// Parameters plus a fixed random projection that turns any [n, m] output
/// into a scalar: sum(out * R) for R [m, 1].
struct Bag {
  std::vector<Parameter> params;
  std::vector<Tensor> consts;
};

Var project(Tape& tape, Var out, const Tensor& r) { return nn::sum(tape, nn::linear(tape, out, tape.constant(r))); }

GradCase make(std::string layer, std::shared_ptr<Bag> bag, std::function<Var(Tape&, Bag&)> body) {
  GradCase c;
  c.layer = std::move(layer);
  c.params = [bag]() { return std::span<Parameter>(bag->params); };
  c.loss = [bag, body = std::move(body)](Tape& tape) { return body(tape, *bag); };
  c.owner = bag;
  return c;
}

}  // namespace

GradReport check_gradients(const GradCase& c, double h) {
  auto params = c.params();
  nn::zero_grads(params);
  {
    Tape tape(true);
    tape.backward(c.loss(tape));
  }
  GradReport report;
  for (auto& p : params) {
    const std::vector<double> analytic(p.value.grad().begin(), p.value.grad().end());
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = eval(c);
      p.value[i] = saved - h;
      const double down = eval(c);
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), kGradFloor});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++report.checked;
    }
  }
  return report;
}

std::vector<GradCase> layer_cases(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x67726164));
  std::vector<GradCase> cases;

  {
    const std::size_t vocab = pick(rng, 3, 7), d = pick(rng, 2, 5), n = pick(rng, 1, 6);
    auto bag = std::make_shared<Bag>();
    bag->params.push_back(random_param(rng, "table", ParamKind::weight, {vocab, d}));
    bag->consts.push_back(random_tensor(rng, {d, 1}));
    std::vector<int> ids(n);
    for (auto& id : ids) id = int(rng.below(vocab));  // repeats exercise scatter-add
    cases.push_back(make("embedding", bag, [ids](Tape& t, Bag& b) {
      return project(t, nn::embedding(t, t.parameter(b.params[0]), ids), b.consts[0]);
    }));
  }
  {
    const std::size_t n = pick(rng, 1, 4), in = pick(rng, 1, 5), out = pick(rng, 1, 5);
    auto bag = std::make_shared<Bag>();
    bag->params.push_back(random_param(rng, "x", ParamKind::weight, {n, in}));
    bag->params.push_back(random_param(rng, "w", ParamKind::weight, {in, out}));
    bag->params.push_back(random_param(rng, "b", ParamKind::bias, {out}));
    bag->consts.push_back(random_tensor(rng, {out, 1}));
    cases.push_back(make("linear", bag, [](Tape& t, Bag& b) {
      auto y = nn::linear(t, t.parameter(b.params[0]), t.parameter(b.params[1]), t.parameter(b.params[2]));
      return project(t, y, b.consts[0]);
    }));
  }
  {
    const std::size_t n = pick(rng, 1, 4), in = pick(rng, 1, 5), out = pick(rng, 1, 5);
    auto bag = std::make_shared<Bag>();
    bag->params.push_back(random_param(rng, "x", ParamKind::weight, {n, in}));
    bag->params.push_back(random_param(rng, "w", ParamKind::weight, {in, out}));
    bag->consts.push_back(random_tensor(rng, {out, 1}));
    cases.push_back(make("linear_no_bias", bag, [](Tape& t, Bag& b) {
      return project(t, nn::linear(t, t.parameter(b.params[0]), t.parameter(b.params[1])), b.consts[0]);
    }));
  }
  {
    const std::size_t n = pick(rng, 1, 4), d = pick(rng, 1, 5), m = pick(rng, 1, 6);
    auto bag = std::make_shared<Bag>();
    bag->params.push_back(random_param(rng, "x", ParamKind::weight, {n, d}));
    bag->params.push_back(random_param(rng, "w", ParamKind::weight, {m, d}));
    bag->consts.push_back(random_tensor(rng, {m, 1}));
    cases.push_back(make("matmul_transposed", bag, [](Tape& t, Bag& b) {
      return project(t, nn::matmul_transposed(t, t.parameter(b.params[0]), t.parameter(b.params[1])), b.consts[0]);
    }));
  }
  {
    const std::size_t n = pick(rng, 1, 4), d = pick(rng, 2, 6);
    auto bag = std::make_shared<Bag>();
    auto x = random_param(rng, "x", ParamKind::weight, {n, d});
    // Keep pre-activations away from the kink so the difference quotient
    // never straddles it.
    for (auto& v : x.value.data()) v = std::copysign(0.1 + std::abs(v), v);
    bag->params.push_back(std::move(x));
    bag->consts.push_back(random_tensor(rng, {d, 1}));
    cases.push_back(make("relu", bag, [](Tape& t, Bag& b) {
      return project(t, nn::relu(t, t.parameter(b.params[0])), b.consts[0]);
    }));
  }
  {
    const std::size_t n = pick(rng, 1, 4), d = pick(rng, 2, 6);
    auto bag = std::make_shared<Bag>();
    bag->params.push_back(random_param(rng, "x", ParamKind::weight, {n, d}));
    bag->params.push_back(random_param(rng, "gain", ParamKind::gain, {d}));
    bag->params.push_back(random_param(rng, "bias", ParamKind::bias, {d}));
    bag->consts.push_back(random_tensor(rng, {d, 1}));
    cases.push_back(make("layer_norm", bag, [](Tape& t, Bag& b) {
      auto y = nn::layer_norm(t, t.parameter(b.params[0]), t.parameter(b.params[1]), t.parameter(b.params[2]));
      return project(t, y, b.consts[0]);
    }));
  }
  {
    const std::size_t heads = pick(rng, 1, 3), n = pick(rng, 1, 5), d = heads * pick(rng, 1, 3);
    auto bag = std::make_shared<Bag>();
    bag->params.push_back(random_param(rng, "q", ParamKind::weight, {n, d}));
    bag->params.push_back(random_param(rng, "k", ParamKind::weight, {n, d}));
    bag->params.push_back(random_param(rng, "v", ParamKind::weight, {n, d}));
    bag->consts.push_back(random_tensor(rng, {d, 1}));
    cases.push_back(make("causal_attention", bag, [heads](Tape& t, Bag& b) {
      auto y = nn::causal_attention(t, t.parameter(b.params[0]), t.parameter(b.params[1]), t.parameter(b.params[2]), heads);
      return project(t, y, b.consts[0]);
    }));
  }
  {
    const std::size_t n = pick(rng, 1, 5), classes = pick(rng, 2, 6);
    auto bag = std::make_shared<Bag>();
    bag->params.push_back(random_param(rng, "logits", ParamKind::weight, {n, classes}, 2.0));
    std::vector<int> targets(n);
    std::vector<double> weights(n);
    for (std::size_t i = 0; i < n; ++i) {
      targets[i] = int(rng.below(classes));
      weights[i] = rng.below(3) == 0 ? 0.0 : rng.uniform() + 0.5;
    }
    cases.push_back(make("cross_entropy", bag, [targets, weights](Tape& t, Bag& b) {
      return nn::cross_entropy(t, t.parameter(b.params[0]), targets, weights);
    }));
  }
  {
    const std::size_t n = pick(rng, 1, 5), classes = pick(rng, 2, 6);
    auto bag = std::make_shared<Bag>();
    bag->params.push_back(random_param(rng, "logits", ParamKind::weight, {n, classes}, 2.0));
    Tensor target({n, classes});
    for (std::size_t r = 0; r < n; ++r) {
      double total = 0.0;
      for (auto& p : target.row(r)) total += (p = rng.uniform() + 1e-3);
      for (auto& p : target.row(r)) p /= total;
    }
    bag->consts.push_back(std::move(target));
    cases.push_back(make("soft_cross_entropy", bag, [](Tape& t, Bag& b) {
      return nn::soft_cross_entropy(t, t.parameter(b.params[0]), b.consts[0]);
    }));
  }
  {
    const std::size_t n = pick(rng, 1, 4), da = pick(rng, 1, 4), db = pick(rng, 1, 4);
    auto bag = std::make_shared<Bag>();
    bag->params.push_back(random_param(rng, "a", ParamKind::weight, {n, da}));
    bag->params.push_back(random_param(rng, "b", ParamKind::weight, {n, db}));
    bag->params.push_back(random_param(rng, "c", ParamKind::weight, {n, da + db}));
    bag->consts.push_back(random_tensor(rng, {da + db, 1}));
    const double factor = rng.normal();
    cases.push_back(make("add_scale_concat_last_row", bag, [factor](Tape& t, Bag& b) {
      auto cat = nn::concat_columns(t, t.parameter(b.params[0]), t.parameter(b.params[1]));
      auto mixed = nn::add(t, nn::scale(t, cat, factor), t.parameter(b.params[2]));
      auto both = nn::add(t, project(t, mixed, b.consts[0]), project(t, nn::last_row(t, mixed), b.consts[0]));
      return both;
    }));
  }
  for (bool tied : {true, false}) {
    lm::LmConfig cfg;
    cfg.vocab_size = pick(rng, 5, 9);
    cfg.n_heads = pick(rng, 1, 2);
    cfg.d_model = cfg.n_heads * pick(rng, 2, 3);
    cfg.n_layers = pick(rng, 1, 2);
    cfg.max_context = 8;
    cfg.ff_width = pick(rng, 3, 6);
    cfg.tie_weights = tied;
    auto model = std::make_shared<lm::LmModel>(cfg, rng.next());
    // Re-draw every tensor at unit scale so gains and biases are not at
    // their trivial initial values.
    for (auto& p : model->parameters()) {
      for (auto& v : p.value.data()) v = 0.5 * rng.normal();
    }
    const std::size_t n = pick(rng, 2, 6);
    std::vector<int> ids(n), targets(n);
    std::vector<double> weights(n);
    for (std::size_t i = 0; i < n; ++i) {
      ids[i] = int(rng.below(cfg.vocab_size));
      targets[i] = int(rng.below(cfg.vocab_size));
      weights[i] = i < n / 2 ? 0.0 : 1.0;
    }
    GradCase c;
    c.layer = tied ? "transformer_tied" : "transformer_untied";
    c.params = [model]() { return model->parameters(); };
    c.loss = [model, ids, targets, weights](Tape& t) {
      return nn::cross_entropy(t, model->forward(t, ids), targets, weights);
    };
    c.owner = model;
    cases.push_back(std::move(c));
  }
  {
    reward::RewardConfig cfg{pick(rng, 2, 4), pick(rng, 3, 6), pick(rng, 2, 5)};
    auto net = std::make_shared<reward::RewardNet>(cfg, rng.next());
    for (auto& p : net->parameters()) {
      for (auto& v : p.value.data()) v = 0.7 * rng.normal();
    }
    const std::size_t n = pick(rng, 1, 4);
    auto inputs = std::make_shared<Tensor>(random_tensor(rng, {n, 2 * cfg.embedding_width}));
    Tensor target({n, 2});
    for (std::size_t r = 0; r < n; ++r) {
      const double s = rng.uniform();
      target.at(r, reward::kGoodClass) = s;
      target.at(r, 1 - reward::kGoodClass) = 1.0 - s;
    }
    GradCase c;
    c.layer = "reward_net";
    c.params = [net]() { return net->parameters(); };
    c.loss = [net, inputs, target](Tape& t) {
      return nn::soft_cross_entropy(t, net->forward(t, t.constant(*inputs)), target);
    };
    c.owner = std::make_shared<std::pair<decltype(net), decltype(inputs)>>(net, inputs);
    cases.push_back(std::move(c));
  }
  return cases;
}

}  // namespace paln::testing
