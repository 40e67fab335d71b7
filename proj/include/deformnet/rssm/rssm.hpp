#pragma once

#include <cstddef>
#include <vector>

#include "deformnet/autodiff/mlp.hpp"
#include "deformnet/autodiff/params.hpp"

namespace deformnet::rssm {

struct RssmConfig {
  std::size_t deter_dim = 128;
  std::size_t categoricals = 16;
  std::size_t classes = 16;
  std::size_t embedding_dim = 256;
  std::size_t action_dim = 4;
  std::size_t hidden_dim = 128;  // width of the MLP heads
  // Actions are rescaled from [action_lo, action_hi] to [-1, 1] on input.
  // Empty bounds mean actions are used as given.
  std::vector<double> action_lo;
  std::vector<double> action_hi;

  double kl_balance = 0.8;  // alpha
  double kl_scale = 1.0;    // beta
  double free_nats = 1.0;
  double embedding_weight = 1.0;
  double reward_weight = 1.0;

  std::size_t stoch_dim() const { return categoricals * classes; }
};

enum class StochasticMode {
  kSample,  // straight-through one-hot sample
  kMode,    // argmax one-hot; no gradient through z
  kMean,    // class probabilities
};

/// Batched state. z and logits are [B, categoricals * classes], h is
/// [B, deter_dim]. `logits` is undefined for the initial state.
struct RssmState {
  ad::Tensor h;
  ad::Tensor z;
  ad::Tensor logits;

  std::size_t batch() const { return h.dim(0); }
};

/// Rows `index` of every tensor of the state.
RssmState select_rows(const RssmState& state, const std::vector<std::size_t>& index);

struct RolloutResult {
  std::vector<RssmState> states;    // H entries
  std::vector<ad::Tensor> rewards;  // H entries of [B, 1]
};

/// Sequences are time-major: element t holds the batch at time t.
/// actions[t] is the action that led into step t (zeros at t = 0).
struct SequenceBatch {
  std::vector<ad::Tensor> embeddings;  // [B, E]
  std::vector<ad::Tensor> actions;     // [B, A]
  std::vector<ad::Tensor> rewards;     // [B, 1]
  ad::Tensor goal;                     // [B, E]
};

struct LossTerms {
  ad::Tensor total;
  double embedding = 0.0;  // mean over batch and time of ||e - e_hat||^2
  double reward = 0.0;     // mean Gaussian NLL
  double kl = 0.0;         // mean KL(q || p), unbalanced, before free nats
};

/// KL(q || p) between categorical rows given logits [N, K]; returns [N, 1].
ad::Tensor categorical_kl(const ad::Tensor& q_logits, const ad::Tensor& p_logits);

/// Balanced KL for logits [B, C*K] with C categoricals of `classes` each:
///   alpha * max(mean KL(sg(q) || p), free) + (1 - alpha) * max(mean KL(q || sg(p)), free)
/// where the mean is over rows of the batch and KL sums over categoricals.
ad::Tensor balanced_kl(const ad::Tensor& q_logits, const ad::Tensor& p_logits, std::size_t classes,
                       double alpha, double free_nats);

/// Unit-variance Gaussian negative log-likelihood, mean over entries.
ad::Tensor gaussian_nll(const ad::Tensor& prediction, const ad::Tensor& target);

class Rssm {
 public:
  Rssm(const RssmConfig& config, ad::ParameterSet& params, Rng& rng);

  const RssmConfig& config() const { return config_; }

  RssmState initial(std::size_t batch) const;

  /// h_t = GRU(h_{t-1}, [z_{t-1}, a_{t-1}]).
  ad::Tensor recurrent(const RssmState& prev, const ad::Tensor& action) const;

  RssmState posterior_step(const RssmState& prev, const ad::Tensor& action,
                           const ad::Tensor& embedding, StochasticMode mode, Rng* rng) const;
  RssmState prior_step(const RssmState& prev, const ad::Tensor& action, StochasticMode mode,
                       Rng* rng) const;

  ad::Tensor posterior_logits(const ad::Tensor& h, const ad::Tensor& embedding) const;
  ad::Tensor prior_logits(const ad::Tensor& h) const;

  ad::Tensor predict_embedding(const RssmState& state) const;
  ad::Tensor predict_reward(const RssmState& state, const ad::Tensor& goal) const;

  /// Open-loop prior rollout. actions[t] is [B, A].
  RolloutResult rollout(const RssmState& initial, const std::vector<ad::Tensor>& actions,
                        const ad::Tensor& goal, StochasticMode mode, Rng* rng) const;

  /// Filters the observed history with the posterior and returns the last
  /// state (batch 1). embeddings has T entries, actions T entries (first may be zero).
  RssmState observe(const std::vector<ad::Tensor>& embeddings,
                    const std::vector<ad::Tensor>& actions, StochasticMode mode, Rng* rng) const;

  /// Posterior states use `mode`; training uses kSample, gradient checks
  /// use kMean (straight-through gradients are biased by design).
  LossTerms loss(const SequenceBatch& batch, Rng& rng,
                 StochasticMode mode = StochasticMode::kSample) const;

  /// Actions rescaled to [-1, 1] per the configured bounds.
  ad::Tensor normalize_action(const ad::Tensor& action) const;

 private:
  ad::Tensor stochastic(const ad::Tensor& logits, StochasticMode mode, Rng* rng) const;

  RssmConfig config_;
  ad::Mlp input_;          // [z, a] -> deter input
  ad::Linear gru_x_;       // input -> 3H
  ad::Linear gru_h_;       // h -> 3H (no separate bias needed but kept for symmetry)
  ad::Mlp posterior_;      // [h, e] -> C*K
  ad::Mlp prior_;          // h -> C*K
  ad::Mlp embedding_head_; // [h, z] -> E
  ad::Mlp reward_head_;    // [h, z, e_g] -> 1
  ad::Tensor action_scale_;
  ad::Tensor action_shift_;
};

}  // namespace deformnet::rssm
