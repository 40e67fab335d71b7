#include <cmath>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "deformnet/autodiff/ops.hpp"
#include "deformnet/harness/image_io.hpp"
#include "deformnet/harness/pipeline.hpp"
#include "deformnet/harness/runtime.hpp"
#include "deformnet/planner/rssm_model.hpp"

namespace deformnet::harness {

namespace {

ad::Tensor row_tensor(const std::vector<double>& v) { return ad::Tensor::from({1, v.size()}, v); }

std::string fmt_value(double v) { return std::isnan(v) ? std::string() : fmt::format("{:.9g}", v); }

// Stream id for a trial: distinct per (goal, policy, trial).
std::uint64_t trial_stream(std::size_t goal, std::size_t policy, std::size_t trial) {
  return (static_cast<std::uint64_t>(goal) << 32) | (static_cast<std::uint64_t>(policy) << 24) | trial;
}

}  // namespace

Models load_models(const RunConfig& config, const RunPaths& paths) {
  Models m;
  m.repr = std::make_unique<RepresentationModel>(config.encoder, config.decoder, 0);
  load_model(paths.repr_checkpoint(), m.repr->params());
  m.dynamics = std::make_unique<DynamicsModel>(config.rssm, 0);
  load_model(paths.dyn_checkpoint(), m.dynamics->params());
  // Inference only: planning gradients flow to the actions, never into the
  // shared weights, so trials can run concurrently.
  m.repr->params().set_requires_grad(false);
  m.dynamics->params().set_requires_grad(false);
  return m;
}

LearnedAgent::LearnedAgent(const RunConfig& config, const Models& models, env::GoalSpec goal,
                           ad::Tensor goal_embedding, std::size_t horizon)
    : config_(config),
      models_(models),
      env_(config.env),
      goal_(std::move(goal)),
      goal_embedding_(std::move(goal_embedding)),
      horizon_(horizon),
      cost_(training_cost(config, goal_)),
      pending_action_(ad::Tensor::zeros({1, config.env.action_dim()})) {
  env_.reset();
  record_state();
}

void LearnedAgent::record_state() {
  frames_.push_back(env_.observe());
  particles_.push_back(env_.state().particles);
  costs_.push_back(current_cost());
}

std::unique_ptr<plan::TrajectoryModel> LearnedAgent::observe_and_model() {
  const auto cloud = prepare_cloud(frames_.back(), env_.cameras(), config_);
  embeddings_.push_back(models_.repr->embed(cloud));
  actions_.push_back(pending_action_);
  pending_action_ = ad::Tensor::zeros({1, config_.env.action_dim()});
  {
    ad::NoGradGuard guard;
    state_ = models_.dynamics->rssm().observe(embeddings_, actions_, rssm::StochasticMode::kMode, nullptr);
  }
  return std::make_unique<plan::RssmTrajectoryModel>(models_.dynamics->rssm(), state_, goal_embedding_,
                                                     horizon_);
}

double LearnedAgent::current_predicted_reward() {
  ad::NoGradGuard guard;
  return models_.dynamics->rssm().predict_reward(state_, goal_embedding_).item();
}

double LearnedAgent::execute(const std::vector<double>& action) {
  env_.step(action);
  pending_action_ = row_tensor(action);
  record_state();
  return costs_.back();
}

double LearnedAgent::current_cost() {
  return env::goal_cost(env_.state().particles, goal_, cost_, config_.env);
}

void final_metrics(const geom::Points& particles, const env::GoalSpec& goal,
                   const env::EnvConfig& env, TrialRecord& record) {
  record.final_cd = env::goal_cost(particles, goal, costs::CostKind::kChamfer, env);
  record.final_emd = env::goal_cost(particles, goal, costs::CostKind::kEmd, env);
  record.final_siou = 1.0 - env::goal_cost(particles, goal, costs::CostKind::kSoftIou, env);
  record.final_d2cd = goal.region ? env::goal_cost(particles, goal, costs::CostKind::kD2cd, env)
                                  : std::numeric_limits<double>::quiet_NaN();
}

TrialRecord run_planner_trial(const RunConfig& config, const Models& models, const GoalBank& bank,
                              const std::string& goal, std::size_t steps, Rng& rng,
                              bool record_episode) {
  const std::size_t g = bank.find(goal);
  LearnedAgent agent(config, models, bank.goals[g], bank.embeddings[g], config.eval.horizon);
  plan::IcemPlanner planner(config.planner);
  plan::MpcConfig mpc;
  mpc.max_steps = steps;
  mpc.threshold = config.eval.reward_threshold;
  const auto result = plan::mpc_loop(agent, planner, config.env.action_bounds(), mpc, rng);

  TrialRecord rec;
  rec.goal = goal;
  rec.policy = "planner";
  for (const auto& s : result.steps) rec.actions.push_back(s.action);
  rec.costs = agent.visited_costs();
  final_metrics(agent.environment().state().particles, bank.goals[g], config.env, rec);
  if (record_episode) {
    rec.episode.metadata = episode_metadata(config, rec.actions.size());
    rec.episode.actions = rec.actions;
    rec.episode.frames = agent.visited_frames();
    rec.episode.particles = agent.visited_particles();
    rec.episode.costs = agent.visited_costs();
  }
  return rec;
}

TrialRecord run_random_trial(const RunConfig& config, const GoalBank& bank, const std::string& goal,
                             std::size_t steps, Rng& rng) {
  const std::size_t g = bank.find(goal);
  const auto& spec = bank.goals[g];
  const auto kind = training_cost(config, spec);
  const auto bounds = config.env.action_bounds();
  env::ToyEnv env(config.env);
  env.reset();
  TrialRecord rec;
  rec.goal = goal;
  rec.policy = "random";
  rec.costs.push_back(env::goal_cost(env.state().particles, spec, kind, config.env));
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<double> action(bounds.dims());
    for (std::size_t d = 0; d < action.size(); ++d) action[d] = rng.uniform(bounds.lo[d], bounds.hi[d]);
    env.step(action);
    rec.actions.push_back(action);
    rec.costs.push_back(env::goal_cost(env.state().particles, spec, kind, config.env));
  }
  final_metrics(env.state().particles, spec, config.env, rec);
  return rec;
}

namespace {

void summarize(const std::vector<TrialRecord>& trials, const std::string& goal,
               const std::string& policy, std::vector<EvalSummaryRow>& out) {
  const std::vector<std::pair<std::string, double TrialRecord::*>> metrics{
      {"cd", &TrialRecord::final_cd},
      {"emd", &TrialRecord::final_emd},
      {"siou", &TrialRecord::final_siou},
      {"d2cd", &TrialRecord::final_d2cd}};
  for (const auto& [name, member] : metrics) {
    std::vector<double> xs;
    for (const auto& t : trials) {
      if (t.goal == goal && t.policy == policy && !std::isnan(t.*member)) xs.push_back(t.*member);
    }
    if (xs.empty()) continue;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
    out.push_back({goal, policy, name, mean, sd, xs.size()});
  }
}

void write_trial_log(const std::filesystem::path& path, const TrialRecord& t) {
  std::ofstream out(path, std::ios::trunc);
  out << "step,cost";
  const std::size_t a = t.actions.empty() ? 0 : t.actions.front().size();
  for (std::size_t d = 0; d < a; ++d) out << ",a" << d;
  out << '\n';
  for (std::size_t s = 0; s < t.costs.size(); ++s) {
    out << s << ',' << fmt_value(t.costs[s]);
    for (std::size_t d = 0; d < a; ++d) out << ',' << (s == 0 ? std::string() : fmt_value(t.actions[s - 1][d]));
    out << '\n';
  }
}

}  // namespace

EvalResult evaluate(const RunConfig& config, const RunPaths& paths, const std::filesystem::path& out,
                    std::uint64_t seed, std::size_t threads) {
  config.validate();
  ensure_writable(out);
  ensure_writable(out / "trials");
  if (config.eval.write_frames) ensure_writable(out / "frames");
  Models models;
  const bool need_models = std::find(config.eval.policies.begin(), config.eval.policies.end(),
                                     "planner") != config.eval.policies.end();
  GoalBank bank;
  if (need_models) {
    models = load_models(config, paths);
    bank = make_goal_bank(config.eval.goals, *models.repr, config);
  } else {
    for (const auto& g : config.eval.goals) bank.goals.push_back(env::make_goal(g, config.env));
  }

  struct Job {
    std::size_t goal, policy, trial;
  };
  std::vector<Job> jobs;
  for (std::size_t gi = 0; gi < config.eval.goals.size(); ++gi) {
    for (std::size_t pi = 0; pi < config.eval.policies.size(); ++pi) {
      for (std::size_t trial = 0; trial < config.eval.trials; ++trial) jobs.push_back({gi, pi, trial});
    }
  }
  EvalResult result;
  result.trials.resize(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t j) {
    const auto [gi, pi, trial] = jobs[j];
    const std::string& goal = config.eval.goals[gi];
    const std::string& policy = config.eval.policies[pi];
    Rng rng = Rng::derive(seed, trial_stream(gi, pi, trial));
    TrialRecord rec = policy == "planner"
                          ? run_planner_trial(config, models, bank, goal, config.eval.max_steps, rng,
                                              config.eval.write_frames)
                          : run_random_trial(config, bank, goal, config.eval.max_steps, rng);
    rec.trial = trial;
    rec.seed = seed;
    const std::string stem = fmt::format("{}_{}_{:02d}", goal, policy, trial);
    write_trial_log(out / "trials" / (stem + ".csv"), rec);
    if (config.eval.write_frames) {
      std::vector<geom::RgbdImage> strip;
      if (policy == "planner") {
        strip = rec.episode.frames.back();
      } else {
        env::ToyEnv env(config.env);
        env.reset();
        for (const auto& a : rec.actions) env.step(a);
        strip = env.observe();
      }
      const auto& goal_images = bank.goals[bank.find(goal)].images;
      strip.insert(strip.end(), goal_images.begin(), goal_images.end());
      write_png_strip(out / "frames" / (stem + ".png"), strip);
    }
    spdlog::info("eval {} {} trial {}: cost {:.5f} -> {:.5f}, cd {:.5f}", goal, policy, trial,
                 rec.costs.front(), rec.costs.back(), rec.final_cd);
    rec.episode = Episode{};
    result.trials[j] = std::move(rec);
  });
  for (const auto& goal : config.eval.goals) {
    for (const auto& policy : config.eval.policies) summarize(result.trials, goal, policy, result.summary);
  }

  {
    std::ofstream csv(out / "metrics.csv", std::ios::trunc);
    csv << "goal,policy,trial,seed,steps,initial_cost,final_cost,cd,cd_x100,emd,emd_x100,siou,d2cd\n";
    for (const auto& t : result.trials) {
      csv << t.goal << ',' << t.policy << ',' << t.trial << ',' << t.seed << ',' << t.actions.size() << ','
          << fmt_value(t.costs.front()) << ',' << fmt_value(t.costs.back()) << ',' << fmt_value(t.final_cd)
          << ',' << fmt_value(100.0 * t.final_cd) << ',' << fmt_value(t.final_emd) << ','
          << fmt_value(100.0 * t.final_emd) << ',' << fmt_value(t.final_siou) << ','
          << fmt_value(t.final_d2cd) << '\n';
    }
  }
  {
    std::ofstream csv(out / "summary.csv", std::ios::trunc);
    csv << "goal,policy,metric,n,mean,std,mean_x100,std_x100\n";
    for (const auto& r : result.summary) {
      const bool scaled = r.metric == "cd" || r.metric == "emd";
      csv << r.goal << ',' << r.policy << ',' << r.metric << ',' << r.count << ',' << fmt_value(r.mean)
          << ',' << fmt_value(r.stddev) << ',' << (scaled ? fmt_value(100.0 * r.mean) : "") << ','
          << (scaled ? fmt_value(100.0 * r.stddev) : "") << '\n';
    }
  }
  {
    std::ofstream txt(out / "summary.txt", std::ios::trunc);
    txt << fmt::format("{:<10} {:<8} {:>18} {:>18} {:>16} {:>16}\n", "goal", "policy", "CD x100",
                       "EMD x100", "SIoU", "D2CD");
    for (const auto& goal : config.eval.goals) {
      for (const auto& policy : config.eval.policies) {
        auto cell = [&](const std::string& metric, double scale) {
          for (const auto& r : result.summary) {
            if (r.goal == goal && r.policy == policy && r.metric == metric) {
              return fmt::format("{:.3f} +- {:.3f}", scale * r.mean, scale * r.stddev);
            }
          }
          return std::string("-");
        };
        txt << fmt::format("{:<10} {:<8} {:>18} {:>18} {:>16} {:>16}\n", goal, policy, cell("cd", 100.0),
                           cell("emd", 100.0), cell("siou", 1.0), cell("d2cd", 1.0));
      }
    }
  }
  return result;
}

Manifest augment(const RunConfig& config, const RunPaths& paths, std::size_t episodes,
                 std::uint64_t seed) {
  config.validate();
  ensure_writable(paths.dataset());
  Manifest manifest = read_manifest(paths.dataset());
  const Models models = load_models(config, paths);
  const GoalBank bank = make_goal_bank(config.collect.goals, *models.repr, config);
  std::size_t next = manifest.episodes.size();
  std::size_t added = 0;
  for (std::size_t i = 0; i < episodes; ++i) {
    const std::string& goal = config.collect.goals[i % config.collect.goals.size()];
    try {
      Rng rng = Rng::derive(seed, (std::uint64_t{1} << 40) + i);
      TrialRecord rec = run_planner_trial(config, models, bank, goal, config.collect.horizon, rng, true);
      Episode& ep = rec.episode;
      ep.metadata["goal"] = goal;
      ep.metadata["cost"] = costs::to_string(training_cost(config, bank.goals[bank.find(goal)]));
      ep.metadata["seed"] = seed;
      ep.metadata["index"] = next;
      ep.metadata["provenance"] = "planned";
      const std::string file = fmt::format("planned_{:05d}.dfne", next);
      write_episode(paths.dataset() / file, ep);
      manifest.episodes.push_back({file, sha256_file(paths.dataset() / file), ep.steps(), goal, "planned"});
      ++next;
      ++added;
      spdlog::info("augment {}: {} cost {:.5f} -> {:.5f}", file, goal, ep.costs.front(), ep.costs.back());
    } catch (const std::exception& e) {
      spdlog::warn("augment: planned episode {} skipped: {}", i, e.what());
    }
  }
  write_manifest(paths.dataset(), manifest);
  spdlog::info("augment: appended {} of {} planned episodes", added, episodes);
  return manifest;
}

}  // namespace deformnet::harness
