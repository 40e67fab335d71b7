#include <cmath>
#include <numbers>

#include "doctest.h"
#include "deformnet/autodiff/ops.hpp"
#include "deformnet/rssm/rssm.hpp"
#include "support/gradcheck.hpp"

using namespace deformnet;
using namespace deformnet::rssm;
using ad::Tensor;

namespace {

std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor random_tensor(ad::Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(ad::shape_numel(shape));
  for (double& x : v) x = rng.uniform(-scale, scale);
  return Tensor::from(std::move(shape), std::move(v));
}

RssmConfig tiny_config() {
  RssmConfig cfg;
  cfg.deter_dim = 5;
  cfg.categoricals = 2;
  cfg.classes = 3;
  cfg.embedding_dim = 4;
  cfg.action_dim = 2;
  cfg.hidden_dim = 6;
  cfg.action_lo = {-1.0, 0.0};
  cfg.action_hi = {1.0, 2.0};
  return cfg;
}

// Plain-double KL between softmax(q) and softmax(p).
double oracle_kl(const std::vector<double>& q, const std::vector<double>& p) {
  auto probs = [](const std::vector<double>& l) {
    double m = l[0];
    for (double x : l) m = std::max(m, x);
    std::vector<double> e(l.size());
    double z = 0;
    for (std::size_t i = 0; i < l.size(); ++i) z += (e[i] = std::exp(l[i] - m));
    for (double& x : e) x /= z;
    return e;
  };
  const auto pq = probs(q), pp = probs(p);
  double kl = 0;
  for (std::size_t i = 0; i < q.size(); ++i) kl += pq[i] * (std::log(pq[i]) - std::log(pp[i]));
  return kl;
}

SequenceBatch random_batch(const RssmConfig& cfg, std::size_t b, std::size_t steps, Rng& rng) {
  SequenceBatch batch;
  for (std::size_t t = 0; t < steps; ++t) {
    batch.embeddings.push_back(random_tensor({b, cfg.embedding_dim}, rng));
    batch.actions.push_back(t == 0 ? Tensor::zeros({b, cfg.action_dim}) : random_tensor({b, cfg.action_dim}, rng));
    batch.rewards.push_back(random_tensor({b, 1}, rng));
  }
  batch.goal = random_tensor({b, cfg.embedding_dim}, rng);
  return batch;
}

}  // namespace

TEST_CASE("zero parameters give the zero fixed point and uniform logits") {
  Rng rng(1);
  ad::ParameterSet params;
  RssmConfig cfg = tiny_config();
  cfg.action_lo.clear();
  cfg.action_hi.clear();
  const Rssm model(cfg, params, rng);
  for (const auto& [name, t] : params.entries()) {
    Tensor handle = t;
    for (double& v : handle.mutable_values()) v = 0.0;
  }
  const auto s = model.posterior_step(model.initial(1), Tensor::zeros({1, 2}), Tensor::zeros({1, 4}),
                                      StochasticMode::kMean, nullptr);
  CHECK(values_of(s.h) == std::vector<double>(5, 0.0));
  for (double p : s.z.values()) CHECK(p == doctest::Approx(1.0 / 3.0));
  CHECK(values_of(model.predict_embedding(s)) == std::vector<double>(4, 0.0));
}

TEST_CASE("posterior and prior share the recurrence; sampling is seeded") {
  Rng rng(2);
  ad::ParameterSet params;
  const auto cfg = tiny_config();
  const Rssm model(cfg, params, rng);
  const auto prev = model.posterior_step(model.initial(3), random_tensor({3, 2}, rng),
                                         random_tensor({3, 4}, rng), StochasticMode::kMean, nullptr);
  const auto a = random_tensor({3, 2}, rng);
  const auto e = random_tensor({3, 4}, rng);
  Rng s1(7), s2(7);
  const auto post = model.posterior_step(prev, a, e, StochasticMode::kSample, &s1);
  const auto prior = model.prior_step(prev, a, StochasticMode::kSample, &s2);
  CHECK(values_of(post.h) == values_of(prior.h));

  Rng s3(7);
  CHECK(values_of(model.posterior_step(prev, a, e, StochasticMode::kSample, &s3).z) == values_of(post.z));
  for (std::size_t r = 0; r < 3 * cfg.categoricals; ++r) {
    double sum = 0;
    for (std::size_t k = 0; k < cfg.classes; ++k) sum += post.z.values()[r * cfg.classes + k];
    CHECK(sum == 1.0);
  }
  const auto m1 = model.prior_step(prev, a, StochasticMode::kMode, nullptr);
  const auto m2 = model.prior_step(prev, a, StochasticMode::kMode, nullptr);
  CHECK(values_of(m1.z) == values_of(m2.z));
  CHECK_THROWS_AS(model.prior_step(prev, a, StochasticMode::kSample, nullptr), std::invalid_argument);
}

TEST_CASE("gradient of h_t flows to the previous deterministic state") {
  Rng rng(3);
  ad::ParameterSet params;
  const Rssm model(tiny_config(), params, rng);
  RssmState prev = model.initial(1);
  prev.h = random_tensor({1, 5}, rng);
  prev.h.set_requires_grad(true);
  prev.z = Tensor::from({1, 6}, {0, 1, 0, 1, 0, 0});
  const auto a = random_tensor({1, 2}, rng);
  const auto result = testing::grad_check([&] { return ad::sum(ad::square(model.recurrent(prev, a))); },
                                          {prev.h});
  CHECK(result.max_rel_error < 1e-6);
  double norm = 0;
  ad::sum(ad::square(model.recurrent(prev, a))).backward();
  for (double g : prev.h.grad()) norm += g * g;
  CHECK(norm > 0.0);
}

TEST_CASE("heads: shapes and goal conditioning") {
  Rng rng(4);
  ad::ParameterSet params;
  const Rssm model(tiny_config(), params, rng);
  const auto s = model.prior_step(model.initial(2), random_tensor({2, 2}, rng), StochasticMode::kMode, nullptr);
  CHECK(model.predict_embedding(s).shape() == ad::Shape{2, 4});
  const auto g1 = random_tensor({2, 4}, rng), g2 = random_tensor({2, 4}, rng);
  const auto r1 = model.predict_reward(s, g1);
  CHECK(r1.shape() == ad::Shape{2, 1});
  CHECK(values_of(r1) != values_of(model.predict_reward(s, g2)));
  CHECK(values_of(r1) == values_of(model.predict_reward(s, g1)));
  CHECK_THROWS_AS(model.predict_reward(s, random_tensor({2, 3}, rng)), ad::ShapeError);
}

TEST_CASE("rollout base case and determinism") {
  Rng rng(5);
  ad::ParameterSet params;
  const Rssm model(tiny_config(), params, rng);
  const auto init = model.posterior_step(model.initial(2), Tensor::zeros({2, 2}), random_tensor({2, 4}, rng),
                                         StochasticMode::kMean, nullptr);
  const auto goal = random_tensor({2, 4}, rng);
  const auto a = random_tensor({2, 2}, rng);
  Rng s1(9), s2(9);
  const auto roll = model.rollout(init, {a}, goal, StochasticMode::kSample, &s1);
  const auto step = model.prior_step(init, a, StochasticMode::kSample, &s2);
  CHECK(values_of(roll.rewards[0]) == values_of(model.predict_reward(step, goal)));

  std::vector<Tensor> actions;
  for (int t = 0; t < 4; ++t) actions.push_back(random_tensor({2, 2}, rng));
  Rng s3(11), s4(11);
  const auto x = model.rollout(init, actions, goal, StochasticMode::kSample, &s3);
  const auto y = model.rollout(init, actions, goal, StochasticMode::kSample, &s4);
  for (int t = 0; t < 4; ++t) CHECK(values_of(x.rewards[t]) == values_of(y.rewards[t]));
  CHECK_THROWS_AS(model.rollout(init, {}, goal, StochasticMode::kMode, nullptr), std::invalid_argument);
}

TEST_CASE("mode rollout is differentiable with respect to actions") {
  Rng rng(6);
  ad::ParameterSet params;
  const Rssm model(tiny_config(), params, rng);
  const auto init = model.posterior_step(model.initial(1), Tensor::zeros({1, 2}), random_tensor({1, 4}, rng),
                                         StochasticMode::kMode, nullptr);
  const auto goal = random_tensor({1, 4}, rng);
  std::vector<Tensor> actions;
  for (int t = 0; t < 3; ++t) {
    actions.push_back(random_tensor({1, 2}, rng));
    actions.back().set_requires_grad(true);
  }
  const auto result = testing::grad_check(
      [&] {
        const auto roll = model.rollout(init, actions, goal,
                                        StochasticMode::kMode, nullptr);
        Tensor total = roll.rewards[0];
        for (std::size_t t = 1; t < roll.rewards.size(); ++t) total = total + roll.rewards[t];
        return ad::sum(total);
      },
      actions);
  INFO(result.worst);
  CHECK(result.max_rel_error < 1e-3);
}

TEST_CASE("categorical KL properties") {
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const auto q = random_tensor({1, 5}, rng, 3.0), p = random_tensor({1, 5}, rng, 3.0);
    CHECK(ad::sum(categorical_kl(q, p)).item() >= 0.0);
    CHECK(std::abs(ad::sum(categorical_kl(q, q)).item()) < 1e-9);
    CHECK(std::abs(ad::sum(categorical_kl(q, q + 2.5)).item()) < 1e-9);  // shift-invariant logits
  }
  const auto q = random_tensor({3, 6}, rng);
  CHECK(balanced_kl(q, q, 3, 0.5, 0.0).item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("balanced KL matches the two-term oracle") {
  Rng rng(8);
  const std::size_t classes = 4, cats = 3, b = 2;
  for (int pair = 0; pair < 100; ++pair) {
    const auto q = random_tensor({b, cats * classes}, rng, 2.0);
    const auto p = random_tensor({b, cats * classes}, rng, 2.0);
    const double alpha = rng.uniform();
    double kl = 0;
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t c = 0; c < cats; ++c) {
        std::vector<double> qv, pv;
        for (std::size_t k = 0; k < classes; ++k) {
          qv.push_back(q.at({i, c * classes + k}));
          pv.push_back(p.at({i, c * classes + k}));
        }
        kl += oracle_kl(qv, pv);
      }
    }
    kl /= b;
    // Both terms share the forward value; stop-gradient only affects backward.
    const double want = alpha * kl + (1 - alpha) * kl;
    CHECK(std::abs(balanced_kl(q, p, classes, alpha, 0.0).item() - want) <= 1e-12);
    const double free = 0.5 * kl;
    CHECK(std::abs(balanced_kl(q, p, classes, alpha, 2 * kl).item() - 2 * kl) <= 1e-12);
    CHECK(std::abs(balanced_kl(q, p, classes, alpha, free).item() - want) <= 1e-12);
  }
}

TEST_CASE("KL balancing gradients: alpha=1 leaves posterior logits untouched") {
  Rng rng(9);
  auto q = random_tensor({2, 6}, rng);
  auto p = random_tensor({2, 6}, rng);
  q.set_requires_grad(true);
  p.set_requires_grad(true);
  balanced_kl(q, p, 3, 1.0, 0.0).backward();
  for (double g : q.grad()) CHECK(g == 0.0);
  double pn = 0;
  for (double g : p.grad()) pn += std::abs(g);
  CHECK(pn > 0.0);

  // Each side's gradient matches the corresponding weighted one-sided KL.
  q.zero_grad();
  p.zero_grad();
  balanced_kl(q, p, 3, 0.8, 0.0).backward();
  const std::vector<double> gq(q.grad().begin(), q.grad().end());
  const std::vector<double> gp(p.grad().begin(), p.grad().end());
  q.zero_grad();
  p.zero_grad();
  ad::mul_scalar(ad::sum(categorical_kl(ad::reshape(q, {4, 3}), ad::reshape(p, {4, 3}))), 0.5).backward();
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(gq[i] == doctest::Approx(0.2 * q.grad()[i]).epsilon(1e-12));
    CHECK(gp[i] == doctest::Approx(0.8 * p.grad()[i]).epsilon(1e-12));
  }
}

TEST_CASE("reward likelihood at the mean") {
  const auto r = Tensor::from({3, 1}, {0.1, -2.0, 5.0});
  CHECK(gaussian_nll(r, r).item() == doctest::Approx(0.5 * std::log(2 * std::numbers::pi)));
}

TEST_CASE("dynamics loss: errors and gradient check") {
  Rng rng(10);
  ad::ParameterSet params;
  RssmConfig cfg = tiny_config();
  cfg.free_nats = 0.0;
  cfg.kl_balance = 0.5;
  const Rssm model(cfg, params, rng);
  Rng data(1);
  auto short_batch = random_batch(cfg, 2, 1, data);
  Rng r0(0);
  CHECK_THROWS_AS(model.loss(short_batch, r0), std::invalid_argument);

  const auto batch = random_batch(cfg, 2, 3, data);
  std::vector<Tensor> leaves;
  for (const auto& [name, t] : params.entries()) {
    // Zero-initialized biases can sit exactly on a ReLU kink.
    Tensor handle = t;
    for (double& v : handle.mutable_values()) v += rng.uniform(-0.1, 0.1);
    leaves.push_back(t);
  }
  const auto result = testing::grad_check(
      [&] {
        Rng r(5);
        // With alpha = 0.5 the stop-gradients halve the KL gradient while the
        // forward value keeps the full KL; subtracting half the (constant) KL
        // value makes the finite-difference target match.
        const auto terms = model.loss(batch, r, StochasticMode::kMean);
        return terms.total - 0.5 * cfg.kl_scale * terms.kl;
      },
      leaves);
  INFO(result.worst);
  CHECK(result.max_rel_error < 1e-4);
  CHECK(result.checked == params.value_count());
}

TEST_CASE("loss decreases when overfitting a small batch") {
  Rng rng(11);
  ad::ParameterSet params;
  RssmConfig cfg = tiny_config();
  cfg.deter_dim = 16;
  cfg.hidden_dim = 16;
  const Rssm model(cfg, params, rng);
  Rng data(2);
  const auto batch = random_batch(cfg, 5, 4, data);
  ad::Adam opt(params, {.learning_rate = 3e-3});
  double first = 0, last = 0;
  for (int step = 0; step < 400; ++step) {
    Rng r = Rng::derive(3, step);
    opt.zero_grad();
    const auto terms = model.loss(batch, r);
    terms.total.backward();
    opt.step();
    if (step >= 50 && step < 100) first += terms.total.item() / 50;
    if (step >= 350) last += terms.total.item() / 50;
  }
  CHECK(last < first);
}
