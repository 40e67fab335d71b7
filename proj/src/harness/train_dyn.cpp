#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "deformnet/autodiff/ops.hpp"
#include "deformnet/harness/pipeline.hpp"

namespace deformnet::harness {

namespace {

ad::Tensor row_tensor(const std::vector<double>& v) { return ad::Tensor::from({1, v.size()}, v); }

std::vector<double> tensor_row(const ad::Tensor& t) {
  return std::vector<double>(t.values().begin(), t.values().end());
}

// Stacks rows picked from `source` into a [B, width] tensor.
ad::Tensor stack(const std::vector<const std::vector<double>*>& rows) {
  const std::size_t width = rows.front()->size();
  std::vector<double> data;
  data.reserve(rows.size() * width);
  for (const auto* r : rows) data.insert(data.end(), r->begin(), r->end());
  return ad::Tensor::from({rows.size(), width}, std::move(data));
}

struct Embeddings {
  std::vector<std::vector<double>> observation;  // per observation
  std::vector<std::vector<double>> goal;         // per bank goal
};

Embeddings embed_all(const ObservationSet& set, const GoalBank& bank, const RepresentationModel& repr) {
  Embeddings e;
  for (const auto& obs : set.observations) e.observation.push_back(tensor_row(repr.embed(obs.cloud)));
  for (const auto& g : bank.embeddings) e.goal.push_back(tensor_row(g));
  return e;
}

std::vector<std::string> bank_goal_names(const RunConfig& config) {
  std::vector<std::string> names = config.collect.goals;
  for (const auto& g : config.eval.goals) {
    if (std::find(names.begin(), names.end(), g) == names.end()) names.push_back(g);
  }
  return names;
}

}  // namespace

std::size_t GoalBank::find(const std::string& name) const {
  for (std::size_t i = 0; i < goals.size(); ++i) {
    if (goals[i].name == name) return i;
  }
  throw std::invalid_argument("goal '" + name + "' is not in the goal bank");
}

GoalBank make_goal_bank(const std::vector<std::string>& names, const RepresentationModel& repr,
                        const RunConfig& config) {
  GoalBank bank;
  const auto cams = config.env.cameras();
  for (const auto& name : names) {
    auto goal = env::make_goal(name, config.env);
    bank.embeddings.push_back(repr.embed(prepare_cloud(goal.images, cams, config)));
    bank.goals.push_back(std::move(goal));
  }
  return bank;
}

std::vector<EmbeddedEpisode> embed_episodes(const Dataset& data, const ObservationSet& set,
                                            const RepresentationModel& repr) {
  std::vector<EmbeddedEpisode> out;
  for (std::size_t e = 0; e < data.episodes.size(); ++e) {
    const auto& ep = data.episodes[e];
    EmbeddedEpisode em;
    const std::size_t adim = ep.metadata.at("action_dim").get<std::size_t>();
    for (std::size_t t = 0; t <= ep.steps(); ++t) {
      em.embeddings.push_back(repr.embed(set.observations[set.index[e][t]].cloud));
      em.actions.push_back(t == 0 ? ad::Tensor::zeros({1, adim}) : row_tensor(ep.actions[t - 1]));
    }
    out.push_back(std::move(em));
  }
  return out;
}

DynDiagnostics evaluate_dynamics(const rssm::Rssm& model, const std::vector<EmbeddedEpisode>& episodes) {
  ad::NoGradGuard guard;
  const auto& cfg = model.config();
  const std::size_t e_dim = cfg.embedding_dim;
  double sq = 0.0, kl = 0.0;
  std::size_t predictions = 0, kl_steps = 0;
  std::vector<double> sum(e_dim, 0.0), sum_sq(e_dim, 0.0);
  std::size_t samples = 0;
  for (const auto& ep : episodes) {
    rssm::RssmState state = model.initial(1);
    for (std::size_t t = 0; t < ep.embeddings.size(); ++t) {
      const auto& target = ep.embeddings[t].values();
      for (std::size_t d = 0; d < e_dim; ++d) {
        sum[d] += target[d];
        sum_sq[d] += target[d] * target[d];
      }
      ++samples;
      if (t > 0) {
        const auto prior = model.prior_step(state, ep.actions[t], rssm::StochasticMode::kMode, nullptr);
        const ad::Tensor predicted = model.predict_embedding(prior);
        const auto pred = predicted.values();
        for (std::size_t d = 0; d < e_dim; ++d) sq += (pred[d] - target[d]) * (pred[d] - target[d]);
        ++predictions;
      }
      state = model.posterior_step(state, ep.actions[t], ep.embeddings[t], rssm::StochasticMode::kMode, nullptr);
      const std::size_t rows = cfg.categoricals;
      kl += ad::sum(rssm::categorical_kl(ad::reshape(state.logits, {rows, cfg.classes}),
                                         ad::reshape(model.prior_logits(state.h), {rows, cfg.classes})))
                .item();
      ++kl_steps;
    }
  }
  DynDiagnostics d;
  if (predictions > 0) d.one_step_mse = sq / static_cast<double>(predictions * e_dim);
  double var = 0.0;
  for (std::size_t k = 0; k < e_dim; ++k) {
    const double mean = sum[k] / static_cast<double>(samples);
    var += sum_sq[k] / static_cast<double>(samples) - mean * mean;
  }
  d.embedding_variance = var / static_cast<double>(e_dim);
  d.kl = kl_steps > 0 ? kl / static_cast<double>(kl_steps) : 0.0;
  return d;
}

std::vector<DynCurvePoint> train_dynamics(const RunConfig& config, const Dataset& data,
                                          const std::filesystem::path& repr_checkpoint,
                                          DynamicsModel& dynamics, std::uint64_t seed,
                                          const TrainingHooks& hooks) {
  const auto& tc = config.dyn_training;
  if (data.episodes.empty()) throw std::invalid_argument("train_dynamics: empty dataset");
  RepresentationModel repr(config.encoder, config.decoder, 0);
  load_model(repr_checkpoint, repr.params());
  std::string repr_hash = sha256_file(repr_checkpoint);
  std::uint64_t encoder_expected = repr.encoder_fingerprint();

  const ObservationSet set = build_observations(data, config, false);
  const GoalBank bank = make_goal_bank(bank_goal_names(config), repr, config);
  Embeddings emb = embed_all(set, bank, repr);

  // Cost of every observation against every bank goal, from the true particles.
  std::vector<std::vector<double>> cost(set.observations.size());
  for (std::size_t e = 0; e < data.episodes.size(); ++e) {
    for (std::size_t t = 0; t <= data.episodes[e].steps(); ++t) {
      auto& row = cost[set.index[e][t]];
      for (const auto& goal : bank.goals) {
        row.push_back(env::goal_cost(data.episodes[e].particles[t], goal, training_cost(config, goal), config.env));
      }
    }
  }

  std::size_t shortest = SIZE_MAX;
  for (const auto& ep : data.episodes) shortest = std::min(shortest, ep.steps() + 1);
  const std::size_t len = std::min(tc.sequence_length, shortest);
  if (len < 2) throw std::invalid_argument("train_dynamics: episodes are too short");
  std::vector<std::pair<std::size_t, std::size_t>> windows;  // (episode, start)
  for (std::size_t e = 0; e < data.episodes.size(); ++e) {
    for (std::size_t s = 0; s + len <= data.episodes[e].steps() + 1; ++s) windows.emplace_back(e, s);
  }
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, windows.size() / tc.batch);
  const std::size_t refresh_steps = tc.refresh_every * steps_per_epoch;
  const std::size_t adim = config.env.action_dim();
  const std::vector<double> zero_action(adim, 0.0);

  ad::AdamConfig adam_cfg;
  adam_cfg.learning_rate = tc.learning_rate;
  adam_cfg.clip_grad_norm = tc.clip_grad_norm;
  ad::Adam adam(dynamics.params(), adam_cfg);
  std::uint64_t start = 0;
  if (!hooks.checkpoint.empty() && std::filesystem::exists(hooks.checkpoint)) {
    auto loaded = load_model(hooks.checkpoint, dynamics.params());
    if (!loaded.optimizer.empty()) adam.load_state(loaded.optimizer);
    start = loaded.step;
    spdlog::info("resuming dynamics training at step {}", start);
  }
  std::ofstream csv;
  if (!hooks.curve_csv.empty()) {
    csv.open(hooks.curve_csv, start > 0 ? std::ios::app : std::ios::trunc);
    if (start == 0) csv << "step,loss,embedding,reward,kl\n";
  }

  std::vector<DynCurvePoint> curve;
  for (std::uint64_t step = start; step < tc.steps; ++step) {
    if (refresh_steps > 0 && step > start && step % refresh_steps == 0) {
      const std::string now = sha256_file(repr_checkpoint);
      if (now != repr_hash) {
        load_model(repr_checkpoint, repr.params());
        emb = embed_all(set, make_goal_bank(bank_goal_names(config), repr, config), repr);
        repr_hash = now;
        encoder_expected = repr.encoder_fingerprint();
        spdlog::info("refreshed embeddings from {} at step {}", repr_checkpoint.string(), step);
      }
    }
    Rng rng = Rng::derive(seed, step);
    std::vector<std::size_t> pick_window(tc.batch), pick_goal(tc.batch);
    for (std::size_t b = 0; b < tc.batch; ++b) {
      pick_window[b] = rng.below(windows.size());
      pick_goal[b] = rng.below(bank.goals.size());
    }
    rssm::SequenceBatch batch;
    for (std::size_t t = 0; t < len; ++t) {
      std::vector<const std::vector<double>*> e_rows, a_rows;
      std::vector<double> rewards;
      for (std::size_t b = 0; b < tc.batch; ++b) {
        const auto [e, s] = windows[pick_window[b]];
        const std::size_t obs = set.index[e][s + t];
        e_rows.push_back(&emb.observation[obs]);
        a_rows.push_back(t == 0 ? &zero_action : &data.episodes[e].actions[s + t - 1]);
        rewards.push_back(-tc.reward_scale * cost[obs][pick_goal[b]]);
      }
      batch.embeddings.push_back(stack(e_rows));
      batch.actions.push_back(stack(a_rows));
      batch.rewards.push_back(ad::Tensor::from({tc.batch, 1}, std::move(rewards)));
    }
    std::vector<const std::vector<double>*> g_rows;
    for (std::size_t b = 0; b < tc.batch; ++b) g_rows.push_back(&emb.goal[pick_goal[b]]);
    batch.goal = stack(g_rows);

    const rssm::LossTerms terms = dynamics.rssm().loss(batch, rng);
    const double value = terms.total.item();
    if (!std::isfinite(value)) {
      throw std::runtime_error("dynamics training diverged at step " + std::to_string(step) +
                               " (non-finite loss); last checkpoint kept");
    }
    adam.zero_grad();
    terms.total.backward();
    adam.step();

    const bool last = step + 1 == tc.steps;
    if (tc.log_every > 0 && (step % tc.log_every == 0 || last)) {
      DynCurvePoint p{step, value, terms.embedding, terms.reward, terms.kl};
      curve.push_back(p);
      if (csv.is_open()) csv << fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g}\n", step, value, p.embedding, p.reward, p.kl);
      if (hooks.on_log) hooks.on_log(CurvePoint{step, value});
    }
    if (!hooks.checkpoint.empty() &&
        ((tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0) || last)) {
      save_model(hooks.checkpoint, dynamics.params(), &adam, step + 1);
    }
  }
  if (repr.encoder_fingerprint() != encoder_expected) {
    throw std::logic_error("train_dynamics: encoder weights changed during dynamics training");
  }
  return curve;
}

std::vector<DynCurvePoint> run_train_dyn(const RunConfig& config, const RunPaths& paths,
                                         std::uint64_t seed) {
  const Dataset data = load_dataset(paths.dataset(), config);
  DynamicsModel dynamics(config.rssm, seed);
  TrainingHooks hooks;
  hooks.checkpoint = paths.dyn_checkpoint();
  hooks.curve_csv = paths.dyn_curve();
  hooks.on_log = [](const CurvePoint& p) { spdlog::info("dyn step {} loss {:.6f}", p.step, p.loss); };
  return train_dynamics(config, data, paths.repr_checkpoint(), dynamics, seed, hooks);
}

}  // namespace deformnet::harness
