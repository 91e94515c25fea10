#include "dip/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "dip/rng.hpp"

namespace dip {

namespace {

using json = nlohmann::ordered_json;

struct Field {
  const char* key;
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

template <typename T>
Field field(const char* key, T RunConfig::*member) {
  auto set = [key, member](RunConfig& c, const json& j) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw ConfigError(std::string(key) + ": expected a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!j.is_string()) throw ConfigError(std::string(key) + ": expected a string");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j.is_number()) throw ConfigError(std::string(key) + ": expected a number");
    } else {
      if (!j.is_number_unsigned()) throw ConfigError(std::string(key) + ": expected a non-negative integer");
    }
    c.*member = j.get<T>();
  };
  auto get = [member](const RunConfig& c) { return json(c.*member); };
  return {key, set, get};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      field("seed", &RunConfig::seed),
      field("clip_length", &RunConfig::clip_length),
      field("frame_size", &RunConfig::frame_size),
      field("patch_size", &RunConfig::patch_size),
      field("video_length", &RunConfig::video_length),
      field("motion_amplitude", &RunConfig::motion_amplitude),
      field("fake_jitter_strength", &RunConfig::fake_jitter_strength),
      field("region_row0", &RunConfig::region_row0),
      field("region_col0", &RunConfig::region_col0),
      field("region_rows", &RunConfig::region_rows),
      field("region_cols", &RunConfig::region_cols),
      field("direction_bias", &RunConfig::direction_bias),
      field("n_train_pairs", &RunConfig::n_train_pairs),
      field("n_heldout_pairs", &RunConfig::n_heldout_pairs),
      field("units", &RunConfig::units),
      field("spatial_layers", &RunConfig::spatial_layers),
      field("temporal_layers", &RunConfig::temporal_layers),
      field("heads", &RunConfig::heads),
      field("embed_dim", &RunConfig::embed_dim),
      field("mlp_ratio", &RunConfig::mlp_ratio),
      field("pooling", &RunConfig::pooling),
      field("k_n", &RunConfig::k_n),
      field("t_diffusion", &RunConfig::t_diffusion),
      field("t_grad", &RunConfig::t_grad),
      field("mu_init", &RunConfig::mu_init),
      field("tau1_init", &RunConfig::tau1_init),
      field("tau2_init", &RunConfig::tau2_init),
      field("dica_layers", &RunConfig::dica_layers),
      field("use_diffusion_bias", &RunConfig::use_diffusion_bias),
      field("lr", &RunConfig::lr),
      field("batch_size", &RunConfig::batch_size),
      field("alpha_ema", &RunConfig::alpha_ema),
      field("d_sti", &RunConfig::d_sti),
      field("lambda_h", &RunConfig::lambda_h),
      field("lambda_v", &RunConfig::lambda_v),
      field("da_weight", &RunConfig::da_weight),
      field("weight_decay", &RunConfig::weight_decay),
      field("steps", &RunConfig::steps),
      field("checkpoint_every", &RunConfig::checkpoint_every),
      field("eval_clips_per_video", &RunConfig::eval_clips_per_video),
      field("gradcheck_eps", &RunConfig::gradcheck_eps),
      field("gradcheck_tolerance", &RunConfig::gradcheck_tolerance),
      field("gradcheck_max_elements", &RunConfig::gradcheck_max_elements),
      field("inspect_video", &RunConfig::inspect_video),
      field("data_dir", &RunConfig::data_dir),
      field("checkpoint_in", &RunConfig::checkpoint_in),
      field("checkpoint_out", &RunConfig::checkpoint_out),
      field("metrics_out", &RunConfig::metrics_out),
      field("out_dir", &RunConfig::out_dir),
  };
  return table;
}

template <typename Fn>
void rethrow_as_config(Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

synth::SynthConfig RunConfig::synth_config() const {
  synth::SynthConfig s;
  s.clip_length = clip_length;
  s.frame_size = frame_size;
  s.patch_size = patch_size;
  s.video_length = video_length;
  s.motion_amplitude = motion_amplitude;
  s.fake_jitter_strength = fake_jitter_strength;
  s.fake_region = {region_row0, region_col0, region_rows, region_cols};
  s.direction_bias = synth::parse_jitter_axis(direction_bias);
  s.seed = derive_seed(seed, {0x73796eULL});
  return s;
}

model::ModelConfig RunConfig::model_config() const {
  model::ModelConfig m;
  m.ste.units = units;
  m.ste.spatial_layers_per_unit = spatial_layers;
  m.ste.temporal_layers_per_unit = temporal_layers;
  m.ste.heads = heads;
  m.ste.embed_dim = embed_dim;
  m.ste.frames = clip_length;
  m.ste.frame_size = frame_size;
  m.ste.patch_size = patch_size;
  m.ste.mlp_ratio = mlp_ratio;
  m.ste.pooling = ste::parse_pooling(pooling);
  m.dica.layers = dica_layers;
  m.dica.heads = heads;
  m.dica.embed_dim = embed_dim;
  m.dica.mlp_ratio = mlp_ratio;
  m.dica.tau1_init = tau1_init;
  m.dica.use_diffusion_bias = use_diffusion_bias;
  m.k_n = k_n;
  m.diffusion_steps = std::min(t_diffusion, t_grad);
  m.mu_init = mu_init;
  m.tau2_init = tau2_init;
  return m;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig t;
  t.lr = lr;
  t.batch_size = batch_size;
  t.alpha_ema = alpha_ema;
  t.d_sti = d_sti;
  t.lambda_h = lambda_h;
  t.lambda_v = lambda_v;
  t.t_diffusion = t_diffusion;
  t.da_weight = da_weight;
  t.weight_decay = weight_decay;
  t.steps = steps;
  t.seed = derive_seed(seed, {0x747261696eULL});
  return t;
}

std::uint64_t RunConfig::init_seed() const { return derive_seed(seed, {0x696e6974ULL}); }
std::uint64_t RunConfig::eval_seed() const { return derive_seed(seed, {0x6576616cULL}); }

void RunConfig::validate() const {
  rethrow_as_config([&] {
    synth_config().validate();
    model_config().validate();
    train_config().validate();
  });
  if (t_grad < 1) throw ConfigError("t_grad must be >= 1");
  if (n_train_pairs < 1) throw ConfigError("n_train_pairs must be >= 1");
  if (eval_clips_per_video < 1) throw ConfigError("eval_clips_per_video must be >= 1");
  if (!(gradcheck_eps >= 1e-7 && gradcheck_eps <= 1e-3)) throw ConfigError("gradcheck_eps must lie in [1e-7, 1e-3]");
  if (!(gradcheck_tolerance > 0.0)) throw ConfigError("gradcheck_tolerance must be > 0");
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig cfg;
  for (const auto& [key, value] : j.items()) {
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    if (it == table.end()) throw ConfigError("unknown config key: " + key);
    it->set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return parse_run_config(os.str());
}

std::string to_json(const RunConfig& cfg, int indent) {
  json j = json::object();
  for (const auto& f : fields()) j[f.key] = f.get(cfg);
  return j.dump(indent);
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

}  // namespace dip
