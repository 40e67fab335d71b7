#include "deformnet/planner/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace deformnet::plan {

void ActionBounds::validate() const {
  if (lo.empty() || lo.size() != hi.size()) throw std::invalid_argument("action bounds: lo/hi size mismatch");
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (!(lo[i] < hi[i])) {
      throw std::invalid_argument("action bounds: dim " + std::to_string(i) + " has lo >= hi");
    }
  }
}

void ActionBounds::clip(Sequence& seq) const {
  const std::size_t a = dims();
  for (std::size_t i = 0; i < seq.size(); ++i) seq[i] = std::clamp(seq[i], lo[i % a], hi[i % a]);
}

bool ActionBounds::contains(const Sequence& seq) const {
  const std::size_t a = dims();
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i] < lo[i % a] || seq[i] > hi[i % a]) return false;
  }
  return true;
}

std::vector<double> TrajectoryModel::evaluate_with_gradient(const std::vector<Sequence>&,
                                                            std::vector<Sequence>&) {
  throw std::logic_error("trajectory model is not differentiable");
}

void PlannerConfig::validate() const {
  if (population == 0 || elites == 0 || iterations == 0) {
    throw std::invalid_argument("planner: population, elites and iterations must be positive");
  }
  if (elites > population) throw std::invalid_argument("planner: elites must not exceed population");
  if (population_decay < 1.0) throw std::invalid_argument("planner: population decay must be >= 1");
  if (elite_keep < 0.0 || elite_keep > 1.0) throw std::invalid_argument("planner: elite_keep must be in [0,1]");
  if (gradient_step_size < 0.0) throw std::invalid_argument("planner: negative gradient step size");
  if (!(initial_std > 0.0)) throw std::invalid_argument("planner: initial_std must be positive");
}

std::vector<double> powerlaw_series(double beta, std::size_t horizon, Rng& rng) {
  const std::size_t t = horizon;
  if (t == 0) return {};
  if (t == 1) return {rng.normal()};
  // One-sided spectrum over frequencies k / T, k = 0..T/2, amplitude f^(-beta/2)
  // with the lowest frequency clamped to 1/T.
  const std::size_t bins = t / 2 + 1;
  std::vector<double> scale(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    const double f = std::max(static_cast<double>(k), 1.0) / static_cast<double>(t);
    scale[k] = std::pow(f, -beta / 2.0);
  }
  // Exact per-sample variance of the inverse transform below, so the series
  // has unit variance for every beta.
  double power = 2.0 * scale[0] * scale[0];
  for (std::size_t k = 1; k < bins; ++k) {
    const bool nyquist = t % 2 == 0 && k == bins - 1;
    power += (nyquist ? 2.0 : 4.0) * scale[k] * scale[k];
  }
  const double sigma = std::sqrt(power) / static_cast<double>(t);

  std::vector<double> re(bins), im(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    re[k] = rng.normal() * scale[k];
    im[k] = rng.normal() * scale[k];
  }
  // Real-valued series: DC (and Nyquist for even T) carry no imaginary part
  // and get sqrt(2) to keep their power.
  im[0] = 0.0;
  re[0] *= std::numbers::sqrt2;
  if (t % 2 == 0) {
    im[bins - 1] = 0.0;
    re[bins - 1] *= std::numbers::sqrt2;
  }
  // Inverse real DFT.
  std::vector<double> out(t);
  for (std::size_t n = 0; n < t; ++n) {
    double acc = re[0];
    for (std::size_t k = 1; k < bins; ++k) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(k * n % t) / static_cast<double>(t);
      const double term = re[k] * std::cos(angle) - im[k] * std::sin(angle);
      acc += (t % 2 == 0 && k == bins - 1) ? term : 2.0 * term;
    }
    out[n] = acc / static_cast<double>(t) / sigma;
  }
  return out;
}

std::vector<Sequence> sample_colored_noise(double beta, std::size_t horizon, std::size_t dims,
                                           std::size_t count, Rng& rng) {
  std::vector<Sequence> out(count, Sequence(horizon * dims));
  for (auto& seq : out) {
    for (std::size_t d = 0; d < dims; ++d) {
      const auto series = powerlaw_series(beta, horizon, rng);
      for (std::size_t t = 0; t < horizon; ++t) seq[t * dims + d] = series[t];
    }
  }
  return out;
}

std::vector<Sequence> sample_sequences(const Sequence& mean, const Sequence& std, double beta,
                                       std::size_t count, const ActionBounds& bounds, Rng& rng) {
  const std::size_t a = bounds.dims();
  if (mean.size() != std.size() || mean.size() % a != 0) {
    throw std::invalid_argument("sample_sequences: mean/std sizes do not match the action dims");
  }
  auto out = sample_colored_noise(beta, mean.size() / a, a, count, rng);
  for (auto& seq : out) {
    for (std::size_t i = 0; i < seq.size(); ++i) seq[i] = mean[i] + std[i] * seq[i];
    bounds.clip(seq);
  }
  return out;
}

namespace {

bool finite(const Sequence& s) {
  return std::all_of(s.begin(), s.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

RefineResult gradient_refine(const std::vector<Sequence>& candidates, TrajectoryModel& model,
                             const ActionBounds& bounds, std::size_t steps, double step_size,
                             std::size_t max_halvings) {
  RefineResult out;
  out.sequences = candidates;
  if (candidates.empty()) return out;
  out.returns = model.evaluate(out.sequences);
  if (steps == 0 || step_size == 0.0 || !model.differentiable()) return out;

  std::vector<char> active(candidates.size(), 1);
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<std::size_t> idx;
    std::vector<Sequence> current;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (active[i]) {
        idx.push_back(i);
        current.push_back(out.sequences[i]);
      }
    }
    if (idx.empty()) break;
    std::vector<Sequence> grads;
    const auto base = model.evaluate_with_gradient(current, grads);
    std::vector<Sequence> proposal(idx.size());
    std::vector<double> eta(idx.size(), step_size);
    std::vector<std::size_t> pending;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      if (!finite(grads[j]) || !std::isfinite(base[j])) {
        spdlog::warn("gradient_refine: non-finite gradient for candidate {}, skipping", idx[j]);
        active[idx[j]] = 0;
        ++out.skipped;
        continue;
      }
      out.returns[idx[j]] = base[j];
      pending.push_back(j);
    }
    for (std::size_t attempt = 0; attempt <= max_halvings && !pending.empty(); ++attempt) {
      std::vector<Sequence> trial;
      for (std::size_t j : pending) {
        Sequence s = current[j];
        for (std::size_t k = 0; k < s.size(); ++k) s[k] += eta[j] * grads[j][k];
        bounds.clip(s);
        trial.push_back(std::move(s));
      }
      const auto values = model.evaluate(trial);
      std::vector<std::size_t> retry;
      for (std::size_t p = 0; p < pending.size(); ++p) {
        const std::size_t j = pending[p];
        if (std::isfinite(values[p]) && values[p] >= base[j]) {
          out.sequences[idx[j]] = std::move(trial[p]);
          out.returns[idx[j]] = values[p];
        } else {
          eta[j] *= 0.5;
          retry.push_back(j);
        }
      }
      pending = std::move(retry);
    }
    // Candidates whose every halving failed stop moving.
    for (std::size_t j : pending) active[idx[j]] = 0;
  }
  return out;
}

IcemPlanner::IcemPlanner(PlannerConfig config) : config_(std::move(config)) { config_.validate(); }

void IcemPlanner::reset() {
  previous_mean_.reset();
  previous_elites_.clear();
}

PlanResult IcemPlanner::plan(TrajectoryModel& model, const ActionBounds& bounds, Rng& rng) {
  bounds.validate();
  const std::size_t h = model.horizon(), a = model.action_dim();
  if (h == 0) throw std::invalid_argument("plan: horizon must be at least 1");
  if (a != bounds.dims()) throw std::invalid_argument("plan: model and bounds disagree on action dims");
  const std::size_t d = h * a;

  Sequence mid(d), mean(d), std(d);
  for (std::size_t i = 0; i < d; ++i) {
    mid[i] = 0.5 * (bounds.lo[i % a] + bounds.hi[i % a]);
    std[i] = config_.initial_std * 0.5 * (bounds.hi[i % a] - bounds.lo[i % a]);
  }
  auto shifted = [&](const Sequence& s) {
    Sequence out(d);
    for (std::size_t i = 0; i + a < d; ++i) out[i] = s[i + a];
    for (std::size_t i = d - a; i < d; ++i) out[i] = mid[i];
    return out;
  };
  const bool warm = config_.shift_init && previous_mean_ && previous_mean_->size() == d;
  mean = warm ? shifted(*previous_mean_) : mid;

  const std::size_t keep = static_cast<std::size_t>(std::floor(config_.elite_keep * config_.elites));
  std::vector<Sequence> carried;
  if (warm) {
    for (std::size_t i = 0; i < std::min(keep, previous_elites_.size()); ++i) {
      if (previous_elites_[i].size() == d) carried.push_back(shifted(previous_elites_[i]));
    }
  }
  const std::size_t refine = config_.refine_count == 0 ? config_.elites : config_.refine_count;

  PlanResult result;
  std::vector<Sequence> elites;
  for (std::size_t it = 0; it < config_.iterations; ++it) {
    const double decayed = static_cast<double>(config_.population) /
                           std::pow(config_.population_decay, static_cast<double>(it));
    const std::size_t n = std::max<std::size_t>(static_cast<std::size_t>(std::llround(decayed)),
                                                std::min(2 * config_.elites, config_.population));
    std::vector<Sequence> samples = sample_sequences(mean, std, config_.noise_beta, n, bounds, rng);
    if (it == 0) {
      samples.insert(samples.end(), carried.begin(), carried.end());
    } else {
      for (std::size_t i = 0; i < std::min(keep, elites.size()); ++i) samples.push_back(elites[i]);
    }
    if (it + 1 == config_.iterations) {
      Sequence m = mean;
      bounds.clip(m);
      samples.push_back(std::move(m));
    }
    std::vector<double> returns = model.evaluate(samples);

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    auto by_return = [&](std::size_t x, std::size_t y) {
      const bool fx = std::isfinite(returns[x]), fy = std::isfinite(returns[y]);
      if (fx != fy) return fx;
      return returns[x] > returns[y] || (returns[x] == returns[y] && x < y);
    };
    if (model.differentiable() && config_.gradient_steps > 0 && config_.gradient_step_size > 0.0) {
      std::stable_sort(order.begin(), order.end(), by_return);
      std::vector<Sequence> top;
      const std::size_t m = std::min(refine, order.size());
      for (std::size_t i = 0; i < m; ++i) top.push_back(samples[order[i]]);
      const auto refined = gradient_refine(top, model, bounds, config_.gradient_steps,
                                           config_.gradient_step_size, config_.max_halvings);
      for (std::size_t i = 0; i < m; ++i) {
        samples[order[i]] = refined.sequences[i];
        returns[order[i]] = refined.returns[i];
      }
      std::iota(order.begin(), order.end(), 0);
    }
    std::stable_sort(order.begin(), order.end(), by_return);

    elites.clear();
    for (std::size_t i = 0; i < std::min(config_.elites, order.size()); ++i) elites.push_back(samples[order[i]]);
    if (std::isfinite(returns[order[0]]) && returns[order[0]] > result.best_return) {
      result.best_return = returns[order[0]];
      result.best = samples[order[0]];
    }

    for (std::size_t i = 0; i < d; ++i) {
      double m = 0.0;
      for (const auto& e : elites) m += e[i];
      m /= static_cast<double>(elites.size());
      double v = 0.0;
      for (const auto& e : elites) v += (e[i] - m) * (e[i] - m);
      mean[i] = m;
      std[i] = std::max(std::sqrt(v / static_cast<double>(elites.size())), config_.min_std);
    }

    IterationStats stats;
    stats.iteration = it;
    stats.population = samples.size();
    stats.best_return = result.best_return;
    double sum = 0.0, sn = 0.0;
    std::size_t finite_count = 0;
    for (double r : returns) {
      if (std::isfinite(r)) {
        sum += r;
        ++finite_count;
      }
    }
    stats.mean_return = finite_count ? sum / static_cast<double>(finite_count) : 0.0;
    for (double s : std) sn += s * s;
    stats.std_norm = std::sqrt(sn);
    result.iterations.push_back(stats);
  }
  if (result.best.empty()) {
    // Every evaluation was non-finite; fall back to the clipped mean.
    result.best = mean;
    bounds.clip(result.best);
  }
  previous_mean_ = result.best;
  previous_elites_ = elites;
  return result;
}

MpcResult mpc_loop(MpcAgent& agent, IcemPlanner& planner, const ActionBounds& bounds,
                   const MpcConfig& config, Rng& rng,
                   const std::function<void(const MpcStepLog&)>& on_step) {
  MpcResult result;
  result.initial_cost = agent.current_cost();
  result.final_cost = result.initial_cost;
  planner.reset();
  for (std::size_t step = 0; step < config.max_steps; ++step) {
    auto model = agent.observe_and_model();
    const double predicted = agent.current_predicted_reward();
    if (predicted > config.threshold) {
      result.stopped_by_threshold = true;
      break;
    }
    const PlanResult plan = planner.plan(*model, bounds, rng);
    MpcStepLog log;
    log.step = step;
    log.action.assign(plan.best.begin(), plan.best.begin() + bounds.dims());
    log.planned_return = plan.best_return;
    log.predicted_reward = predicted;
    log.cost_after = agent.execute(log.action);
    result.final_cost = log.cost_after;
    result.steps.push_back(log);
    if (on_step) on_step(log);
  }
  return result;
}

}  // namespace deformnet::plan
