#include "deformnet/planner/rssm_model.hpp"

#include <stdexcept>

#include "deformnet/autodiff/ops.hpp"

namespace deformnet::plan {

RssmTrajectoryModel::RssmTrajectoryModel(const rssm::Rssm& model, rssm::RssmState start,
                                         ad::Tensor goal, std::size_t horizon)
    : model_(model), start_(std::move(start)), goal_(std::move(goal)), horizon_(horizon) {
  if (start_.batch() != 1) throw std::invalid_argument("rssm trajectory model: start state must have batch 1");
  if (horizon_ == 0) throw std::invalid_argument("rssm trajectory model: horizon must be at least 1");
}

std::vector<ad::Tensor> RssmTrajectoryModel::action_tensors(const std::vector<Sequence>& sequences,
                                                            bool requires_grad) const {
  const std::size_t a = action_dim(), b = sequences.size();
  std::vector<ad::Tensor> out;
  for (std::size_t t = 0; t < horizon_; ++t) {
    std::vector<double> values(b * a);
    for (std::size_t i = 0; i < b; ++i) {
      if (sequences[i].size() != horizon_ * a) {
        throw std::invalid_argument("rssm trajectory model: sequence length mismatch");
      }
      for (std::size_t k = 0; k < a; ++k) values[i * a + k] = sequences[i][t * a + k];
    }
    out.push_back(ad::Tensor::from({b, a}, std::move(values), requires_grad));
  }
  return out;
}

ad::Tensor RssmTrajectoryModel::returns(const std::vector<ad::Tensor>& actions,
                                        std::size_t batch) const {
  const rssm::RssmState init = rssm::select_rows(start_, std::vector<std::size_t>(batch, 0));
  const auto rollout = model_.rollout(init, actions, goal_, rssm::StochasticMode::kMode, nullptr);
  ad::Tensor total = rollout.rewards[0];
  for (std::size_t t = 1; t < rollout.rewards.size(); ++t) total = ad::add(total, rollout.rewards[t]);
  return total;
}

std::vector<double> RssmTrajectoryModel::evaluate(const std::vector<Sequence>& sequences) {
  if (sequences.empty()) return {};
  ad::NoGradGuard guard;
  const ad::Tensor r = returns(action_tensors(sequences, false), sequences.size());
  return {r.values().begin(), r.values().end()};
}

std::vector<double> RssmTrajectoryModel::evaluate_with_gradient(
    const std::vector<Sequence>& sequences, std::vector<Sequence>& gradients) {
  gradients.assign(sequences.size(), Sequence(horizon_ * action_dim(), 0.0));
  if (sequences.empty()) return {};
  auto actions = action_tensors(sequences, true);
  const ad::Tensor r = returns(actions, sequences.size());
  std::vector<double> out(r.values().begin(), r.values().end());
  // Rows are independent, so the gradient of the batch sum is per-row.
  ad::sum(r).backward();
  const std::size_t a = action_dim();
  for (std::size_t t = 0; t < horizon_; ++t) {
    const auto g = actions[t].grad();
    for (std::size_t i = 0; i < sequences.size(); ++i) {
      for (std::size_t k = 0; k < a; ++k) gradients[i][t * a + k] = g[i * a + k];
    }
  }
  return out;
}

}  // namespace deformnet::plan
