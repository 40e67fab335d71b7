#pragma once

#include "deformnet/planner/planner.hpp"
#include "deformnet/rssm/rssm.hpp"

namespace deformnet::plan {

/// Return of a sequence = sum of predicted rewards over a mode rollout of
/// the prior from `start`. Gradients flow through the deterministic path.
class RssmTrajectoryModel : public TrajectoryModel {
 public:
  RssmTrajectoryModel(const rssm::Rssm& model, rssm::RssmState start, ad::Tensor goal,
                      std::size_t horizon);

  std::size_t horizon() const override { return horizon_; }
  std::size_t action_dim() const override { return model_.config().action_dim; }
  std::vector<double> evaluate(const std::vector<Sequence>& sequences) override;
  bool differentiable() const override { return true; }
  std::vector<double> evaluate_with_gradient(const std::vector<Sequence>& sequences,
                                             std::vector<Sequence>& gradients) override;

 private:
  std::vector<ad::Tensor> action_tensors(const std::vector<Sequence>& sequences,
                                         bool requires_grad) const;
  ad::Tensor returns(const std::vector<ad::Tensor>& actions, std::size_t batch) const;

  const rssm::Rssm& model_;
  rssm::RssmState start_;
  ad::Tensor goal_;
  std::size_t horizon_;
};

}  // namespace deformnet::plan
