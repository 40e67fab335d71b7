#include "deformnet/rssm/rssm.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "deformnet/autodiff/ops.hpp"

namespace deformnet::rssm {

using ad::Tensor;

RssmState select_rows(const RssmState& state, const std::vector<std::size_t>& index) {
  RssmState out;
  out.h = ad::gather(state.h, index);
  out.z = ad::gather(state.z, index);
  if (state.logits.defined()) out.logits = ad::gather(state.logits, index);
  return out;
}

Tensor categorical_kl(const Tensor& q_logits, const Tensor& p_logits) {
  if (q_logits.shape() != p_logits.shape() || q_logits.rank() != 2) {
    throw ad::ShapeError("categorical_kl: expected matching [N, K] logits, got " +
                         ad::shape_to_string(q_logits.shape()) + " and " +
                         ad::shape_to_string(p_logits.shape()));
  }
  const Tensor log_q = ad::log_softmax(q_logits);
  const Tensor log_p = ad::log_softmax(p_logits);
  return ad::sum(ad::exp(log_q) * (log_q - log_p), 1, true);
}

Tensor balanced_kl(const Tensor& q_logits, const Tensor& p_logits, std::size_t classes,
                   double alpha, double free_nats) {
  if (q_logits.rank() != 2 || q_logits.dim(1) % classes != 0) {
    throw ad::ShapeError("balanced_kl: logits width not a multiple of the class count");
  }
  const std::size_t b = q_logits.dim(0);
  const std::size_t rows = b * (q_logits.dim(1) / classes);
  auto mean_kl = [&](const Tensor& q, const Tensor& p) {
    const Tensor per_row = categorical_kl(ad::reshape(q, {rows, classes}), ad::reshape(p, {rows, classes}));
    // Sum over categoricals of a state, mean over the batch.
    return ad::mul_scalar(ad::sum(per_row), 1.0 / static_cast<double>(b));
  };
  const Tensor prior_term = ad::clamp_min(mean_kl(q_logits.detach(), p_logits), free_nats);
  const Tensor post_term = ad::clamp_min(mean_kl(q_logits, p_logits.detach()), free_nats);
  return prior_term * alpha + post_term * (1.0 - alpha);
}

Tensor gaussian_nll(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw ad::ShapeError("gaussian_nll: " + ad::shape_to_string(prediction.shape()) + " vs " +
                         ad::shape_to_string(target.shape()));
  }
  return ad::mean(ad::square(prediction - target)) * 0.5 + 0.5 * std::log(2.0 * std::numbers::pi);
}

Rssm::Rssm(const RssmConfig& config, ad::ParameterSet& params, Rng& rng) : config_(config) {
  const std::size_t hd = config.deter_dim, sd = config.stoch_dim(), e = config.embedding_dim;
  const std::size_t hid = config.hidden_dim;
  input_ = ad::Mlp::create(params, "rssm/input", {sd + config.action_dim, hd}, rng);
  gru_x_ = ad::Linear::create(params, "rssm/gru/x", hd, 3 * hd, rng);
  gru_h_ = ad::Linear::create(params, "rssm/gru/h", hd, 3 * hd, rng);
  posterior_ = ad::Mlp::create(params, "rssm/posterior", {hd + e, hid, sd}, rng);
  prior_ = ad::Mlp::create(params, "rssm/prior", {hd, hid, sd}, rng);
  embedding_head_ = ad::Mlp::create(params, "rssm/embedding", {hd + sd, hid, hid, e}, rng);
  reward_head_ = ad::Mlp::create(params, "rssm/reward", {hd + sd + e, hid, hid, 1}, rng);

  std::vector<double> scale(config.action_dim, 1.0), shift(config.action_dim, 0.0);
  if (!config.action_lo.empty() || !config.action_hi.empty()) {
    if (config.action_lo.size() != config.action_dim || config.action_hi.size() != config.action_dim) {
      throw std::invalid_argument("rssm: action bounds must have action_dim entries");
    }
    for (std::size_t i = 0; i < config.action_dim; ++i) {
      const double span = config.action_hi[i] - config.action_lo[i];
      if (!(span > 0)) throw std::invalid_argument("rssm: action bound hi must exceed lo");
      scale[i] = 2.0 / span;
      shift[i] = -1.0 - config.action_lo[i] * scale[i];
    }
  }
  action_scale_ = Tensor::from({1, config.action_dim}, scale);
  action_shift_ = Tensor::from({1, config.action_dim}, shift);
}

RssmState Rssm::initial(std::size_t batch) const {
  return {Tensor::zeros({batch, config_.deter_dim}), Tensor::zeros({batch, config_.stoch_dim()}), {}};
}

Tensor Rssm::normalize_action(const Tensor& action) const {
  if (action.rank() != 2 || action.dim(1) != config_.action_dim) {
    throw ad::ShapeError("rssm: action must be [B, " + std::to_string(config_.action_dim) +
                         "], got " + ad::shape_to_string(action.shape()));
  }
  return action * action_scale_ + action_shift_;
}

Tensor Rssm::recurrent(const RssmState& prev, const Tensor& action) const {
  const std::size_t hd = config_.deter_dim;
  const Tensor x = ad::relu(input_(ad::concat({prev.z, normalize_action(action)}, 1)));
  const Tensor gx = gru_x_(x);
  const Tensor gh = gru_h_(prev.h);
  const Tensor reset = ad::sigmoid(ad::slice(gx, 1, 0, hd) + ad::slice(gh, 1, 0, hd));
  const Tensor update = ad::sigmoid(ad::slice(gx, 1, hd, 2 * hd) + ad::slice(gh, 1, hd, 2 * hd));
  const Tensor cand = ad::tanh(ad::slice(gx, 1, 2 * hd, 3 * hd) + reset * ad::slice(gh, 1, 2 * hd, 3 * hd));
  // h' = (1 - u) * n + u * h
  return cand + update * (prev.h - cand);
}

Tensor Rssm::stochastic(const Tensor& logits, StochasticMode mode, Rng* rng) const {
  const std::size_t b = logits.dim(0);
  const ad::Shape rows{b * config_.categoricals, config_.classes};
  const ad::Shape flat{b, config_.stoch_dim()};
  switch (mode) {
    case StochasticMode::kSample:
      if (!rng) throw std::invalid_argument("rssm: sampled mode needs an rng");
      return ad::reshape(ad::straight_through_sample(ad::reshape(logits, rows), *rng), flat);
    case StochasticMode::kMode:
      return ad::reshape(ad::argmax_one_hot(ad::reshape(logits, rows)), flat);
    case StochasticMode::kMean:
      return ad::reshape(ad::softmax(ad::reshape(logits, rows)), flat);
  }
  return logits;
}

Tensor Rssm::posterior_logits(const Tensor& h, const Tensor& embedding) const {
  if (embedding.rank() != 2 || embedding.dim(1) != config_.embedding_dim) {
    throw ad::ShapeError("rssm: embedding must be [B, " + std::to_string(config_.embedding_dim) +
                         "], got " + ad::shape_to_string(embedding.shape()));
  }
  return posterior_(ad::concat({h, embedding}, 1));
}

Tensor Rssm::prior_logits(const Tensor& h) const { return prior_(h); }

RssmState Rssm::posterior_step(const RssmState& prev, const Tensor& action,
                               const Tensor& embedding, StochasticMode mode, Rng* rng) const {
  RssmState s;
  s.h = recurrent(prev, action);
  s.logits = posterior_logits(s.h, embedding);
  s.z = stochastic(s.logits, mode, rng);
  return s;
}

RssmState Rssm::prior_step(const RssmState& prev, const Tensor& action, StochasticMode mode,
                           Rng* rng) const {
  RssmState s;
  s.h = recurrent(prev, action);
  s.logits = prior_logits(s.h);
  s.z = stochastic(s.logits, mode, rng);
  return s;
}

Tensor Rssm::predict_embedding(const RssmState& state) const {
  return embedding_head_(ad::concat({state.h, state.z}, 1));
}

Tensor Rssm::predict_reward(const RssmState& state, const Tensor& goal) const {
  if (goal.rank() != 2 || goal.dim(1) != config_.embedding_dim) {
    throw ad::ShapeError("rssm: goal embedding must be [B, " +
                         std::to_string(config_.embedding_dim) + "], got " +
                         ad::shape_to_string(goal.shape()));
  }
  const Tensor g = goal.dim(0) == state.batch() || state.batch() == 1
                       ? goal
                       : ad::gather(goal, std::vector<std::size_t>(state.batch(), 0));
  return reward_head_(ad::concat({state.h, state.z, g}, 1));
}

RolloutResult Rssm::rollout(const RssmState& initial, const std::vector<Tensor>& actions,
                            const Tensor& goal, StochasticMode mode, Rng* rng) const {
  if (actions.empty()) throw std::invalid_argument("rollout: horizon must be at least 1");
  RolloutResult out;
  RssmState state = initial;
  for (const auto& a : actions) {
    state = prior_step(state, a, mode, rng);
    out.rewards.push_back(predict_reward(state, goal));
    out.states.push_back(state);
  }
  return out;
}

RssmState Rssm::observe(const std::vector<Tensor>& embeddings, const std::vector<Tensor>& actions,
                        StochasticMode mode, Rng* rng) const {
  if (embeddings.empty() || embeddings.size() != actions.size()) {
    throw std::invalid_argument("observe: need one action per embedding");
  }
  RssmState state = initial(embeddings.front().dim(0));
  for (std::size_t t = 0; t < embeddings.size(); ++t) {
    state = posterior_step(state, actions[t], embeddings[t], mode, rng);
  }
  return state;
}

LossTerms Rssm::loss(const SequenceBatch& batch, Rng& rng, StochasticMode mode) const {
  const std::size_t steps = batch.embeddings.size();
  if (steps < 2) throw std::invalid_argument("dynamics loss: episodes need at least 2 steps");
  if (batch.actions.size() != steps || batch.rewards.size() != steps) {
    throw std::invalid_argument("dynamics loss: embeddings, actions and rewards differ in length");
  }
  const std::size_t b = batch.embeddings.front().dim(0);
  RssmState state = initial(b);
  Tensor emb_sum, rew_sum, kl_sum;
  double kl_raw = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    state = posterior_step(state, batch.actions[t], batch.embeddings[t], mode, &rng);
    const Tensor prior = prior_logits(state.h);
    const Tensor err = ad::mul_scalar(ad::sum(ad::square(predict_embedding(state) - batch.embeddings[t])),
                                      1.0 / static_cast<double>(b));
    const Tensor nll = gaussian_nll(predict_reward(state, batch.goal), batch.rewards[t]);
    const Tensor kl = balanced_kl(state.logits, prior, config_.classes, config_.kl_balance,
                                  config_.free_nats);
    {
      ad::NoGradGuard guard;
      const std::size_t rows = b * config_.categoricals;
      kl_raw += ad::sum(categorical_kl(ad::reshape(state.logits, {rows, config_.classes}),
                                       ad::reshape(prior, {rows, config_.classes})))
                    .item() /
                static_cast<double>(b);
    }
    emb_sum = t == 0 ? err : emb_sum + err;
    rew_sum = t == 0 ? nll : rew_sum + nll;
    kl_sum = t == 0 ? kl : kl_sum + kl;
  }
  const double inv_t = 1.0 / static_cast<double>(steps);
  LossTerms out;
  out.embedding = emb_sum.item() * inv_t;
  out.reward = rew_sum.item() * inv_t;
  out.kl = kl_raw * inv_t;
  out.total = (emb_sum * config_.embedding_weight + rew_sum * config_.reward_weight +
               kl_sum * config_.kl_scale) *
              inv_t;
  return out;
}

}  // namespace deformnet::rssm
