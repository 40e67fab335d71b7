#include <cmath>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include <spdlog/spdlog.h>

#include "deformnet/harness/config.hpp"
#include "deformnet/harness/episode.hpp"
#include "deformnet/harness/pipeline.hpp"
#include "deformnet/harness/training.hpp"

using namespace deformnet;
using namespace deformnet::harness;
namespace fs = std::filesystem;

namespace {

const bool quiet = [] {
  spdlog::set_level(spdlog::level::warn);
  return true;
}();

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "deformnet_harness_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RunConfig tiny_config() {
  RunConfig c = default_config();
  c.encoder.point_widths = {8};
  c.encoder.post_widths = {8};
  c.encoder.deformation_dim = 4;
  c.encoder.appearance_dim = 2;
  c.encoder.max_points = 64;
  c.decoder.density_widths = {8};
  c.decoder.feature_dim = 4;
  c.decoder.color_width = 4;
  c.decoder.deformation_dim = 4;
  c.decoder.appearance_dim = 2;
  c.decoder.samples_per_ray = 4;
  c.rssm.deter_dim = 8;
  c.rssm.categoricals = 2;
  c.rssm.classes = 3;
  c.rssm.hidden_dim = 8;
  c.rssm.embedding_dim = 6;
  c.collect.horizon = 3;
  c.repr_training.steps = 4;
  c.repr_training.rays_per_frame = 8;
  c.repr_training.frames_per_batch = 2;
  c.repr_training.log_every = 1;
  c.dyn_training.steps = 6;
  c.dyn_training.batch = 2;
  c.dyn_training.log_every = 1;
  c.dyn_training.refresh_every = 1;
  c.planner.population = 8;
  c.planner.elites = 2;
  c.planner.iterations = 2;
  c.planner.gradient_steps = 1;
  c.eval.trials = 2;
  c.eval.max_steps = 2;
  c.eval.horizon = 2;
  c.eval.write_frames = false;
  return c;
}

Episode small_episode() {
  Episode e;
  e.metadata = {{"width", 2}, {"height", 1}, {"cameras", 1}, {"action_dim", 2},
                {"particle_count", 2}, {"steps", 1}};
  e.actions = {{0.25, -0.5}};
  for (int t = 0; t < 2; ++t) {
    geom::RgbdImage img(2, 1);
    img.set_rgb(0, 0, {0.1 * t, 0.2, 0.3});
    img.depth(1, 0) = 0.25f + t;
    e.frames.push_back({img});
    e.particles.push_back({{0.0, 0.1 * t, 0.2}, {1.0, 2.0, 3.0}});
    e.costs.push_back(0.5 * t);
  }
  return e;
}

}  // namespace

TEST_CASE("DFNE arrays and metadata round-trip") {
  const auto dir = scratch("dfne");
  DfneFile f;
  f.metadata = {{"name", "x"}, {"n", 3}};
  const std::vector<double> d{1.5, -2.0, 1e-300};
  const std::vector<float> s{0.25f, 7.0f};
  f.arrays.push_back(NamedArray::f64("d", {3}, d));
  f.arrays.push_back(NamedArray::f32("s", {1, 2}, s));
  write_dfne(dir / "a.dfne", f);
  const DfneFile g = read_dfne(dir / "a.dfne");
  CHECK(g.metadata == f.metadata);
  CHECK(g.get("d").as_f64() == d);
  CHECK(g.get("s").as_f32() == s);
  CHECK(g.get("s").shape == std::vector<std::uint64_t>{1, 2});
  CHECK(slurp(dir / "a.dfne").substr(0, 4) == "DFNE");
  CHECK_THROWS(g.get("missing"));
}

TEST_CASE("episode files round-trip and reject inconsistent step counts") {
  const auto dir = scratch("episode");
  const Episode e = small_episode();
  write_episode(dir / "e.dfne", e);
  const Episode r = read_episode(dir / "e.dfne");
  CHECK(r.actions == e.actions);
  CHECK(r.costs == e.costs);
  CHECK(r.particles == e.particles);
  CHECK(r.frames[1][0].data() == e.frames[1][0].data());

  // Metadata claiming two steps over one-step arrays.
  DfneFile f = to_dfne(e);
  f.metadata["steps"] = 2;
  write_dfne(dir / "bad.dfne", f);
  CHECK_THROWS_AS(read_episode(dir / "bad.dfne"), std::runtime_error);

  Episode short_costs = e;
  short_costs.costs.pop_back();
  CHECK_THROWS_AS(short_costs.validate(), std::runtime_error);
}

TEST_CASE("particle files round-trip") {
  const auto dir = scratch("particles");
  const geom::Points pts{{0.1, 0.2, 0.3}, {-1.0, 0.0, 2.5}};
  write_particles(dir / "p.dfne", pts, "target");
  CHECK(read_particles(dir / "p.dfne") == pts);
}

TEST_CASE("config defaults round-trip and unknown keys are rejected") {
  const RunConfig d = default_config();
  d.validate();
  const Json j = to_json(d);
  CHECK(to_json(config_from_json(j)) == j);
  CHECK(j.at("eval").at("reward_threshold").is_null());
  CHECK(std::isinf(config_from_json(j).eval.reward_threshold));

  Json partial = {{"planner", {{"population", 32}}}};
  CHECK(config_from_json(partial).planner.population == 32);
  CHECK(config_from_json(partial).planner.elites == d.planner.elites);

  CHECK_THROWS_WITH_AS(config_from_json({{"planner", {{"populaton", 32}}}}),
                       doctest::Contains("$.planner.populaton"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json({{"seed", -1}}), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json({{"env", {{"mode", "squeeze"}}}}), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json({{"decoder", {{"deformation_dim", 3}}}}), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json({{"eval", {{"goals", {"donut"}}}}}), std::invalid_argument);
}

TEST_CASE("collect writes the requested shape and is deterministic") {
  RunConfig cfg = tiny_config();
  cfg.collect.horizon = 5;
  const auto a = scratch("collect_a"), b = scratch("collect_b");
  const Manifest m = collect(cfg, a, 1, 11);
  REQUIRE(m.episodes.size() == 1);
  const Episode ep = read_episode(a / m.episodes[0].file);
  CHECK(ep.steps() == 5);
  CHECK(ep.frames.size() == 6);
  for (const auto& set : ep.frames) CHECK(set.size() == static_cast<std::size_t>(cfg.env.rig.count));
  CHECK(ep.metadata.at("provenance") == "random");

  collect(cfg, b, 1, 11);
  for (const auto& name : {std::string(kManifestName), m.episodes[0].file}) {
    CHECK(slurp(a / name) == slurp(b / name));
  }
  // Worker count does not change the bytes.
  const auto c = scratch("collect_c"), d = scratch("collect_d");
  cfg.collect.horizon = 2;
  collect(cfg, c, 3, 4, 1);
  collect(cfg, d, 3, 4, 3);
  CHECK(slurp(c / kManifestName) == slurp(d / kManifestName));
}

TEST_CASE("manifest checksums validate and catch corruption") {
  RunConfig cfg = tiny_config();
  const auto dir = scratch("checksum");
  const Manifest m = collect(cfg, dir, 2, 5);
  CHECK_NOTHROW(verify_dataset(dir, read_manifest(dir)));
  CHECK(load_dataset(dir, cfg).episodes.size() == 2);

  std::string bytes = slurp(dir / m.episodes[1].file);
  bytes[bytes.size() / 2] ^= 0x01;
  std::ofstream(dir / m.episodes[1].file, std::ios::binary | std::ios::trunc) << bytes;
  CHECK_THROWS_WITH(load_dataset(dir, cfg), doctest::Contains("checksum"));
}

TEST_CASE("collect refuses an unwritable directory before simulating") {
  const auto dir = scratch("unwritable");
  std::ofstream(dir / "file") << "x";
  CHECK_THROWS_AS(collect(tiny_config(), dir / "file" / "dataset", 1, 0), std::runtime_error);
  CHECK_FALSE(fs::exists(dir / "file" / "dataset"));
}

TEST_CASE("resumed representation training continues with the same losses") {
  RunConfig cfg = tiny_config();
  const auto dir = scratch("resume");
  collect(cfg, dir / "dataset", 2, 3);
  const Dataset data = load_dataset(dir / "dataset", cfg);
  const ObservationSet set = build_observations(data, cfg, true);
  const auto frames = all_frames(set);
  const auto cams = cfg.env.cameras();
  // Constant rate, so stopping early does not change the first steps.
  cfg.repr_training.final_learning_rate = cfg.repr_training.learning_rate;

  RepresentationModel full(cfg.encoder, cfg.decoder, 9);
  const auto straight = train_representation(full, set.observations, frames, cams, cfg.repr_training, 21);
  REQUIRE(straight.size() == 4);

  TrainingHooks hooks;
  hooks.checkpoint = dir / "repr.ckpt";
  ReprTrainingConfig half = cfg.repr_training;
  RepresentationModel first(cfg.encoder, cfg.decoder, 9);
  half.steps = 2;
  train_representation(first, set.observations, frames, cams, half, 21, hooks);
  RepresentationModel second(cfg.encoder, cfg.decoder, 1234);
  const auto resumed = train_representation(second, set.observations, frames, cams, cfg.repr_training, 21, hooks);
  REQUIRE(resumed.size() == 2);
  CHECK(resumed[0].step == 2);
  CHECK(resumed[0].loss == straight[2].loss);
  CHECK(resumed[1].loss == straight[3].loss);
}

TEST_CASE("representation loss starts near the pixel second moment and falls toward the variance") {
  RunConfig cfg = tiny_config();
  cfg.decoder.density_widths = {32, 32};
  cfg.decoder.feature_dim = 16;
  cfg.decoder.color_width = 16;
  cfg.decoder.samples_per_ray = 16;
  cfg.repr_training.steps = 150;
  cfg.repr_training.rays_per_frame = 64;
  const auto dir = scratch("variance");
  collect(cfg, dir / "dataset", 2, 8);
  const Dataset data = load_dataset(dir / "dataset", cfg);
  const ObservationSet set = build_observations(data, cfg, true);
  const auto frames = all_frames(set);

  // Oracle: first and second moments of the target colour under the ray
  // sampling mix (foreground share f, else uniform over the image).
  const double f = cfg.repr_training.foreground_fraction;
  double m1 = 0.0, m2 = 0.0;
  std::size_t channels = 0;
  for (const auto& ref : frames) {
    const auto& img = set.observations[ref.observation].frames[ref.camera];
    double fg1 = 0, fg2 = 0, all1 = 0, all2 = 0;
    std::size_t nfg = 0;
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        const auto c = img.rgb(x, y);
        all1 += c.sum();
        all2 += c.squaredNorm();
        if (img.depth(x, y) > 0.0f) {
          fg1 += c.sum();
          fg2 += c.squaredNorm();
          ++nfg;
        }
      }
    }
    const double npx = static_cast<double>(img.pixel_count());
    m1 += f * fg1 / nfg + (1 - f) * all1 / npx;
    m2 += f * fg2 / nfg + (1 - f) * all2 / npx;
    channels += 3;
  }
  m1 /= static_cast<double>(channels);
  m2 /= static_cast<double>(channels);
  const double variance = m2 - m1 * m1;

  RepresentationModel model(cfg.encoder, cfg.decoder, 2);
  const auto curve = train_representation(model, set.observations, frames, cfg.env.cameras(),
                                          cfg.repr_training, 4);
  double late = 0.0;
  for (std::size_t i = 100; i < 150; ++i) late += curve[i].loss / 50.0;
  MESSAGE("step0 " << curve[0].loss << " second moment " << m2 << " variance " << variance
                   << " late " << late);
  // An empty scene renders black, so the first loss is the second moment.
  CHECK(curve[0].loss == doctest::Approx(m2).epsilon(0.1));
  CHECK(late < 1.2 * variance);
}

TEST_CASE("dynamics training leaves the encoder untouched") {
  RunConfig cfg = tiny_config();
  const auto dir = scratch("freeze");
  const RunPaths paths{dir};
  collect(cfg, paths.dataset(), 3, 6);
  run_train_repr(cfg, paths, 6, 2);
  const std::string before = sha256_file(paths.repr_checkpoint());
  RepresentationModel repr(cfg.encoder, cfg.decoder, 0);
  load_model(paths.repr_checkpoint(), repr.params());
  const auto fingerprint = repr.encoder_fingerprint();

  const auto curve = run_train_dyn(cfg, paths, 6);
  CHECK(curve.size() == cfg.dyn_training.steps);
  for (const auto& p : curve) CHECK(p.kl > 0.0);
  CHECK(sha256_file(paths.repr_checkpoint()) == before);
  RepresentationModel again(cfg.encoder, cfg.decoder, 0);
  load_model(paths.repr_checkpoint(), again.params());
  CHECK(again.encoder_fingerprint() == fingerprint);
  CHECK(fs::exists(paths.dyn_curve()));

  SUBCASE("augment appends schema-valid planned episodes") {
    const Manifest m = augment(cfg, paths, 2, 6);
    REQUIRE(m.episodes.size() == 5);
    std::size_t planned = 0;
    for (const auto& e : m.episodes) planned += e.provenance == "planned";
    CHECK(planned == 2);
    const Dataset data = load_dataset(paths.dataset(), cfg);
    CHECK(data.episodes.back().metadata.at("provenance") == "planned");
    CHECK(data.episodes.back().steps() == cfg.collect.horizon);
  }
  SUBCASE("evaluation is reproducible") {
    cfg.eval.goals = {"dent"};
    evaluate(cfg, paths, dir / "eval_a", 17, 1);
    evaluate(cfg, paths, dir / "eval_b", 17, 2);
    CHECK(slurp(dir / "eval_a" / "metrics.csv") == slurp(dir / "eval_b" / "metrics.csv"));
    CHECK(slurp(dir / "eval_a" / "summary.csv") == slurp(dir / "eval_b" / "summary.csv"));
    CHECK(slurp(dir / "eval_a" / "summary.txt").find("planner") != std::string::npos);
  }
}

TEST_CASE("a state equal to the goal scores CD 0 and SIoU 1") {
  const env::EnvConfig cfg;
  for (const auto& name : {"dent", "split"}) {
    const auto goal = env::make_goal(name, cfg);
    TrialRecord rec;
    final_metrics(*goal.particles, goal, cfg, rec);
    CHECK(rec.final_cd == 0.0);
    CHECK(rec.final_emd == 0.0);
    CHECK(rec.final_siou == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::isnan(rec.final_d2cd));
  }
}

TEST_CASE("random-policy evaluation matches collect-time cost statistics") {
  RunConfig cfg = tiny_config();
  cfg.collect.goals = {"dent"};
  cfg.collect.horizon = 3;
  cfg.eval.goals = {"dent"};
  cfg.eval.policies = {"random"};
  cfg.eval.max_steps = 3;
  cfg.eval.trials = 40;
  const auto dir = scratch("selfconsistency");
  collect(cfg, dir / "dataset", 40, 100);
  const Dataset data = load_dataset(dir / "dataset", cfg);
  std::vector<double> collected;
  for (const auto& ep : data.episodes) collected.push_back(ep.costs.back());
  const auto result = evaluate(cfg, RunPaths{dir}, dir / "eval", 200);
  std::vector<double> evaluated;
  for (const auto& t : result.trials) evaluated.push_back(t.costs.back());

  auto stats = [](const std::vector<double>& xs) {
    double m = 0.0, v = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    for (double x : xs) v += (x - m) * (x - m);
    return std::pair{m, v / static_cast<double>(xs.size() - 1)};
  };
  const auto [ma, va] = stats(collected);
  const auto [mb, vb] = stats(evaluated);
  const double se = std::sqrt(va / collected.size() + vb / evaluated.size());
  MESSAGE("collect " << ma << " eval " << mb << " se " << se);
  CHECK(std::abs(ma - mb) < 3.0 * se);
}
