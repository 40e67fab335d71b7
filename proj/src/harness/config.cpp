#include "deformnet/harness/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>
#include <type_traits>

namespace deformnet::harness {

using Json = nlohmann::json;

namespace {

// One field list per struct drives both directions of the conversion.

template <class V>
void fields(geom::Aabb& c, V& v) {
  v("lo", c.lo);
  v("hi", c.hi);
}

template <class V>
void fields(geom::RingRigConfig& c, V& v) {
  v("count", c.count);
  v("radius", c.radius);
  v("height", c.height);
  v("azimuth_offset", c.azimuth_offset);
  v("target", c.target);
  v("width", c.width);
  v("height_px", c.height_px);
  v("focal", c.focal);
  v("near", c.near);
  v("far", c.far);
}

template <class V>
void fields(env::EnvConfig& c, V& v) {
  v("particle_count", c.particle_count);
  v("workspace", c.workspace);
  v("blob_radius", c.blob_radius);
  v("blob_height", c.blob_height);
  v("blob_seed", c.blob_seed);
  v("mode", c.mode);
  v("pusher_radius", c.pusher_radius);
  v("pusher_height", c.pusher_height);
  v("along_sweep", c.along_sweep);
  v("finger_width", c.finger_width);
  v("finger_height", c.finger_height);
  v("max_finger_gap", c.max_finger_gap);
  v("plasticity", c.plasticity);
  v("cohesion", c.cohesion);
  v("cohesion_k", c.cohesion_k);
  v("rig", c.rig);
  v("splat_radius", c.splat_radius);
  v("light_direction", c.light_direction);
  v("albedo", c.albedo);
  v("ambient", c.ambient);
}

template <class V>
void fields(geom::OutlierRemovalConfig& c, V& v) {
  v("ransac_iterations", c.ransac_iterations);
  v("plane_distance", c.plane_distance);
  v("min_plane_fraction", c.min_plane_fraction);
  v("k", c.k);
  v("std_ratio", c.std_ratio);
}

template <class V>
void fields(PerceptionConfig& c, V& v) {
  v("remove_plane", c.remove_plane);
  v("statistical_filter", c.statistical_filter);
  v("outliers", c.outliers);
}

template <class V>
void fields(enc::EncoderConfig& c, V& v) {
  v("point_widths", c.point_widths);
  v("post_widths", c.post_widths);
  v("deformation_dim", c.deformation_dim);
  v("appearance_dim", c.appearance_dim);
  v("max_points", c.max_points);
  v("crop", c.crop);
}

template <class V>
void fields(nerf::DecoderConfig& c, V& v) {
  v("pe_position_bands", c.pe_position_bands);
  v("pe_direction_bands", c.pe_direction_bands);
  v("density_widths", c.density_widths);
  v("feature_dim", c.feature_dim);
  v("color_width", c.color_width);
  v("deformation_dim", c.deformation_dim);
  v("appearance_dim", c.appearance_dim);
  v("samples_per_ray", c.samples_per_ray);
  v("crop", c.crop);
  v("distance_unit", c.distance_unit);
  v("initial_density_bias", c.initial_density_bias);
  v("background", c.background);
}

template <class V>
void fields(rssm::RssmConfig& c, V& v) {
  v("deter_dim", c.deter_dim);
  v("categoricals", c.categoricals);
  v("classes", c.classes);
  v("embedding_dim", c.embedding_dim);
  v("action_dim", c.action_dim);
  v("hidden_dim", c.hidden_dim);
  v("action_lo", c.action_lo);
  v("action_hi", c.action_hi);
  v("kl_balance", c.kl_balance);
  v("kl_scale", c.kl_scale);
  v("free_nats", c.free_nats);
  v("embedding_weight", c.embedding_weight);
  v("reward_weight", c.reward_weight);
}

template <class V>
void fields(plan::PlannerConfig& c, V& v) {
  v("population", c.population);
  v("elites", c.elites);
  v("iterations", c.iterations);
  v("noise_beta", c.noise_beta);
  v("population_decay", c.population_decay);
  v("elite_keep", c.elite_keep);
  v("shift_init", c.shift_init);
  v("gradient_steps", c.gradient_steps);
  v("gradient_step_size", c.gradient_step_size);
  v("refine_count", c.refine_count);
  v("max_halvings", c.max_halvings);
  v("initial_std", c.initial_std);
  v("min_std", c.min_std);
}

template <class V>
void fields(CollectConfig& c, V& v) {
  v("episodes", c.episodes);
  v("horizon", c.horizon);
  v("goals", c.goals);
}

template <class V>
void fields(ReprTrainingConfig& c, V& v) {
  v("steps", c.steps);
  v("frames_per_batch", c.frames_per_batch);
  v("rays_per_frame", c.rays_per_frame);
  v("foreground_fraction", c.foreground_fraction);
  v("learning_rate", c.learning_rate);
  v("final_learning_rate", c.final_learning_rate);
  v("clip_grad_norm", c.clip_grad_norm);
  v("log_every", c.log_every);
  v("checkpoint_every", c.checkpoint_every);
}

template <class V>
void fields(DynTrainingConfig& c, V& v) {
  v("steps", c.steps);
  v("batch", c.batch);
  v("sequence_length", c.sequence_length);
  v("learning_rate", c.learning_rate);
  v("clip_grad_norm", c.clip_grad_norm);
  v("reward_scale", c.reward_scale);
  v("refresh_every", c.refresh_every);
  v("log_every", c.log_every);
  v("checkpoint_every", c.checkpoint_every);
  v("cost", c.cost);
}

template <class V>
void fields(AugmentConfig& c, V& v) {
  v("episodes", c.episodes);
}

template <class V>
void fields(EvalConfig& c, V& v) {
  v("trials", c.trials);
  v("max_steps", c.max_steps);
  v("reward_threshold", c.reward_threshold);
  v("horizon", c.horizon);
  v("goals", c.goals);
  v("policies", c.policies);
  v("write_frames", c.write_frames);
}

template <class V>
void fields(RunConfig& c, V& v) {
  v("seed", c.seed);
  v("env", c.env);
  v("perception", c.perception);
  v("encoder", c.encoder);
  v("decoder", c.decoder);
  v("rssm", c.rssm);
  v("planner", c.planner);
  v("collect", c.collect);
  v("repr_training", c.repr_training);
  v("dyn_training", c.dyn_training);
  v("augment", c.augment);
  v("eval", c.eval);
}

template <class T, class V>
concept HasFields = requires(T& t, V& v) { fields(t, v); };

struct Writer {
  Json& out;

  template <class T>
  void operator()(const char* key, T& value) {
    out[key] = encode(value);
  }

  template <class T>
  static Json encode(T& value) {
    if constexpr (std::is_same_v<T, double>) {
      if (std::isinf(value) && value > 0) return nullptr;
      return value;
    } else if constexpr (std::is_same_v<T, Eigen::Vector3d>) {
      return Json::array({value.x(), value.y(), value.z()});
    } else if constexpr (std::is_same_v<T, env::ActionMode>) {
      return env::to_string(value);
    } else if constexpr (HasFields<T, Writer>) {
      Json obj = Json::object();
      Writer w{obj};
      fields(value, w);
      return obj;
    } else {
      return value;
    }
  }
};

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  throw std::invalid_argument("config: " + path + ": " + what);
}

struct Reader {
  const Json& in;
  std::string path;
  std::set<std::string> seen;

  template <class T>
  void operator()(const char* key, T& value) {
    seen.insert(key);
    if (!in.contains(key)) return;
    decode(in.at(key), path + "." + key, value);
  }

  void check_unknown() const {
    for (auto it = in.begin(); it != in.end(); ++it) {
      if (!seen.count(it.key())) bad(path + "." + it.key(), "unknown key");
    }
  }

  template <class T>
  static void decode(const Json& j, const std::string& where, T& value) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) bad(where, "expected a boolean");
      value = j.get<bool>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (j.is_null()) {
        value = std::numeric_limits<double>::infinity();
      } else {
        if (!j.is_number()) bad(where, "expected a number");
        value = j.get<double>();
      }
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) bad(where, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (!j.is_number_unsigned() && j.get<std::int64_t>() < 0) bad(where, "expected a non-negative integer");
      }
      value = j.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!j.is_string()) bad(where, "expected a string");
      value = j.get<std::string>();
    } else if constexpr (std::is_same_v<T, Eigen::Vector3d>) {
      if (!j.is_array() || j.size() != 3) bad(where, "expected an array of 3 numbers");
      for (int i = 0; i < 3; ++i) decode(j[i], where + "[" + std::to_string(i) + "]", value[i]);
    } else if constexpr (std::is_same_v<T, env::ActionMode>) {
      if (!j.is_string()) bad(where, "expected \"push\" or \"pinch\"");
      try {
        value = env::parse_action_mode(j.get<std::string>());
      } catch (const std::exception& e) {
        bad(where, e.what());
      }
    } else if constexpr (HasFields<T, Reader>) {
      if (!j.is_object()) bad(where, "expected an object");
      Reader r{j, where, {}};
      fields(value, r);
      r.check_unknown();
    } else {
      // std::vector of one of the above
      if (!j.is_array()) bad(where, "expected an array");
      value.clear();
      value.resize(j.size());
      for (std::size_t i = 0; i < j.size(); ++i) {
        decode(j[i], where + "[" + std::to_string(i) + "]", value[i]);
      }
    }
  }
};

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("config: " + what);
}

}  // namespace

void RunConfig::validate() const {
  env.validate();
  planner.validate();
  require(encoder.deformation_dim == decoder.deformation_dim &&
              encoder.appearance_dim == decoder.appearance_dim,
          "encoder and decoder latent sizes differ");
  require(rssm.embedding_dim == encoder.embedding_dim(),
          "rssm.embedding_dim must equal encoder deformation_dim + appearance_dim");
  require(rssm.action_dim == env.action_dim(),
          "rssm.action_dim must match the environment action mode");
  require(rssm.action_lo.empty() || rssm.action_lo.size() == rssm.action_dim,
          "rssm.action_lo has the wrong length");
  require(rssm.action_hi.size() == rssm.action_lo.size(), "rssm action bounds differ in length");
  require(collect.horizon > 0, "collect.horizon must be positive");
  require(!collect.goals.empty(), "collect.goals is empty");
  require(repr_training.frames_per_batch > 0 && repr_training.rays_per_frame > 0,
          "repr_training batch sizes must be positive");
  require(dyn_training.batch > 0 && dyn_training.sequence_length > 1,
          "dyn_training needs batch > 0 and sequence_length > 1");
  require(dyn_training.reward_scale > 0, "dyn_training.reward_scale must be positive");
  require(eval.horizon > 0 && eval.max_steps > 0, "eval horizon and max_steps must be positive");
  for (const auto& p : eval.policies) {
    require(p == "planner" || p == "random", "eval.policies: unknown policy '" + p + "'");
  }
  for (const auto* list : {&collect.goals, &eval.goals}) {
    for (const auto& g : *list) env::make_goal(g, env);  // throws on unknown names
  }
  if (!dyn_training.cost.empty()) costs::parse_cost_kind(dyn_training.cost);
}

RunConfig default_config() {
  RunConfig c;
  c.encoder.point_widths = {32, 64};
  c.encoder.post_widths = {64};
  c.encoder.deformation_dim = 16;
  c.encoder.appearance_dim = 8;
  c.encoder.max_points = 512;
  c.encoder.crop = c.env.workspace;

  c.decoder.pe_position_bands = 6;
  c.decoder.pe_direction_bands = 2;
  c.decoder.density_widths = {64, 64, 64};
  c.decoder.feature_dim = 32;
  c.decoder.color_width = 32;
  c.decoder.deformation_dim = c.encoder.deformation_dim;
  c.decoder.appearance_dim = c.encoder.appearance_dim;
  c.decoder.samples_per_ray = 32;
  c.decoder.crop = c.env.workspace;
  c.decoder.crop.hi.z() = 0.04;
  c.decoder.initial_density_bias = -2.0;

  c.rssm.deter_dim = 64;
  c.rssm.categoricals = 8;
  c.rssm.classes = 8;
  c.rssm.hidden_dim = 64;
  c.rssm.embedding_dim = c.encoder.embedding_dim();
  c.rssm.action_dim = c.env.action_dim();
  const auto bounds = c.env.action_bounds();
  c.rssm.action_lo = bounds.lo;
  c.rssm.action_hi = bounds.hi;
  return c;
}

Json to_json(const RunConfig& config) {
  RunConfig copy = config;
  return Writer::encode(copy);
}

RunConfig config_from_json(const Json& doc) {
  RunConfig c = default_config();
  Reader::decode(doc, "$", c);
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument("config: " + path.string() + ": " + e.what());
  }
  return config_from_json(doc);
}

}  // namespace deformnet::harness
