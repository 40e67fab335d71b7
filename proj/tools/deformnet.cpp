#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "deformnet/harness/config.hpp"
#include "deformnet/harness/image_io.hpp"
#include "deformnet/harness/pipeline.hpp"
#include "deformnet/harness/runtime.hpp"

using namespace deformnet;
using namespace deformnet::harness;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  std::size_t threads = 1;
  std::string log_level = "info";
};

// Explicit --config wins; otherwise the run directory's saved config; then defaults.
RunConfig resolve_config(const Globals& g) {
  RunConfig cfg;
  if (!g.config_path.empty()) {
    cfg = load_config(g.config_path);
  } else if (std::filesystem::exists(RunPaths{g.out}.config())) {
    cfg = load_config(RunPaths{g.out}.config());
  } else {
    cfg = default_config();
  }
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

void save_config(const RunConfig& cfg, const RunPaths& paths) {
  ensure_writable(paths.root);
  std::ofstream out(paths.config(), std::ios::trunc);
  out << to_json(cfg).dump(2) << '\n';
}

void print_plan(const std::string& goal, const plan::PlanResult& result) {
  Json j;
  j["goal"] = goal;
  j["best_return"] = result.best_return;
  j["best"] = result.best;
  j["iterations"] = Json::array();
  for (const auto& it : result.iterations) {
    j["iterations"].push_back({{"iteration", it.iteration},
                               {"population", it.population},
                               {"best_return", it.best_return},
                               {"mean_return", it.mean_return},
                               {"std_norm", it.std_norm}});
  }
  std::cout << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  configure_runtime();
  CLI::App app{"Deformable object manipulation with a learned latent world model"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed overriding the configuration");
  app.add_option("--out", g.out, "Run directory")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for collection and evaluation")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error")->capture_default_str();

  std::optional<std::size_t> episodes;
  auto* collect_cmd = app.add_subcommand("collect", "Record random-action episodes into <out>/dataset");
  collect_cmd->add_option("--episodes", episodes, "Episode count (default from config)");

  auto* repr_cmd = app.add_subcommand("train-repr", "Train the encoder and decoder on the dataset");
  auto* dyn_cmd = app.add_subcommand("train-dyn", "Train the latent dynamics with the encoder frozen");

  auto* augment_cmd = app.add_subcommand("augment", "Append planner-driven episodes to the dataset");
  augment_cmd->add_option("--episodes", episodes, "Episode count (default from config)");

  std::string goal = "dent";
  std::string episode_path;
  std::size_t step = 0;
  auto* plan_cmd = app.add_subcommand("plan", "Plan one action sequence and print it as JSON");
  plan_cmd->add_option("--goal", goal, "Goal name")->capture_default_str();
  plan_cmd->add_option("--episode", episode_path, "Replay this episode's actions first")->check(CLI::ExistingFile);
  plan_cmd->add_option("--step", step, "Number of episode actions to replay");

  std::optional<std::size_t> trials;
  std::vector<std::string> goals, policies;
  auto* eval_cmd = app.add_subcommand("eval", "Closed-loop evaluation; writes <out>/eval");
  eval_cmd->add_option("--trials", trials, "Trials per goal and policy");
  eval_cmd->add_option("--goal", goals, "Goal (repeatable)");
  eval_cmd->add_option("--policy", policies, "planner or random (repeatable)");

  std::string png = "render.png";
  bool decoded = false;
  auto* render_cmd = app.add_subcommand("render", "Write an episode step's frames as a PNG strip");
  render_cmd->add_option("--episode", episode_path, "Episode file")->required()->check(CLI::ExistingFile);
  render_cmd->add_option("--step", step, "Step index")->capture_default_str();
  render_cmd->add_option("--png", png, "Output image")->capture_default_str();
  render_cmd->add_flag("--decoded", decoded, "Add the representation model's reconstructions");

  bool print_defaults = false;
  auto* config_cmd = app.add_subcommand("config", "Print the default configuration or check one");
  config_cmd->add_flag("--print-defaults", print_defaults, "Print every default as JSON");

  app.fallthrough();
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    const RunPaths paths{g.out};
    if (config_cmd->parsed()) {
      if (print_defaults || g.config_path.empty()) {
        std::cout << to_json(default_config()).dump(2) << '\n';
      } else {
        load_config(g.config_path);
        std::cout << g.config_path << ": ok\n";
      }
      return 0;
    }
    RunConfig cfg = resolve_config(g);

    if (collect_cmd->parsed()) {
      save_config(cfg, paths);
      collect(cfg, paths.dataset(), episodes.value_or(cfg.collect.episodes), cfg.seed, g.threads);
    } else if (repr_cmd->parsed()) {
      save_config(cfg, paths);
      const auto r = run_train_repr(cfg, paths, cfg.seed);
      std::cout << "psnr " << r.psnr << '\n';
    } else if (dyn_cmd->parsed()) {
      save_config(cfg, paths);
      run_train_dyn(cfg, paths, cfg.seed);
    } else if (augment_cmd->parsed()) {
      augment(cfg, paths, episodes.value_or(cfg.augment.episodes), cfg.seed);
    } else if (plan_cmd->parsed()) {
      const Models models = load_models(cfg, paths);
      const GoalBank bank = make_goal_bank({goal}, *models.repr, cfg);
      LearnedAgent agent(cfg, models, bank.goals[0], bank.embeddings[0], cfg.eval.horizon);
      if (!episode_path.empty()) {
        const Episode ep = read_episode(episode_path);
        if (step > ep.steps()) throw std::invalid_argument("--step is past the end of the episode");
        for (std::size_t t = 0; t < step; ++t) {
          agent.observe_and_model();
          agent.execute(ep.actions[t]);
        }
      }
      auto model = agent.observe_and_model();
      plan::IcemPlanner planner(cfg.planner);
      Rng rng(cfg.seed);
      print_plan(goal, planner.plan(*model, cfg.env.action_bounds(), rng));
    } else if (eval_cmd->parsed()) {
      if (trials) cfg.eval.trials = *trials;
      if (!goals.empty()) cfg.eval.goals = goals;
      if (!policies.empty()) cfg.eval.policies = policies;
      cfg.validate();
      evaluate(cfg, paths, paths.eval_dir(), cfg.seed, g.threads);
      std::ifstream table(paths.eval_dir() / "summary.txt");
      std::cout << table.rdbuf();
    } else if (render_cmd->parsed()) {
      const Episode ep = read_episode(episode_path);
      if (step > ep.steps()) throw std::invalid_argument("--step is past the end of the episode");
      std::vector<geom::RgbdImage> strip = ep.frames[step];
      if (decoded) {
        RepresentationModel repr(cfg.encoder, cfg.decoder, 0);
        load_model(paths.repr_checkpoint(), repr.params());
        const auto cams = cfg.env.cameras();
        const auto e = repr.embed(prepare_cloud(ep.frames[step], cams, cfg));
        const auto [e_d, e_a] = enc::split(e, repr.deformation_dim());
        for (const auto& cam : cams) strip.push_back(repr.decoder().render_image(cam, e_d, e_a));
      }
      write_png_strip(png, strip);
      std::cout << "wrote " << png << '\n';
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
