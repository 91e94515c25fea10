#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dip/model.hpp"
#include "dip/synth.hpp"
#include "dip/train.hpp"

namespace dip {

// Thrown for malformed or inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat run configuration. Every key of the JSON form maps to one member;
/// defaults reproduce the desk-scale runs.
struct RunConfig {
  std::uint64_t seed = 1;

  // data
  std::size_t clip_length = 4;  // T
  std::size_t frame_size = 32;  // M
  std::size_t patch_size = 8;   // P
  std::size_t video_length = 16;
  double motion_amplitude = 1.0;
  double fake_jitter_strength = 3.0;
  std::size_t region_row0 = 8;
  std::size_t region_col0 = 8;
  std::size_t region_rows = 16;
  std::size_t region_cols = 16;
  std::string direction_bias = "both";
  std::size_t n_train_pairs = 64;
  std::size_t n_heldout_pairs = 32;

  // encoder
  std::size_t units = 3;
  std::size_t spatial_layers = 3;
  std::size_t temporal_layers = 1;
  std::size_t heads = 4;
  std::size_t embed_dim = 32;
  std::size_t mlp_ratio = 4;
  std::string pooling = "mean";

  // diffusion and decoder
  std::size_t k_n = 7;
  std::size_t t_diffusion = 20;
  std::size_t t_grad = 5;
  double mu_init = 0.05;
  double tau1_init = 1.0;
  double tau2_init = 1.0;
  std::size_t dica_layers = 6;
  bool use_diffusion_bias = true;

  // optimisation
  double lr = 5e-4;
  std::size_t batch_size = 4;
  double alpha_ema = 0.99;
  double d_sti = 1.0;
  double lambda_h = 0.5;
  double lambda_v = 0.5;
  double da_weight = 1.0;
  double weight_decay = 0.01;
  std::size_t steps = 2000;
  std::size_t checkpoint_every = 500;

  // evaluation, gradient check, inspection
  std::size_t eval_clips_per_video = 4;
  double gradcheck_eps = 1e-5;
  double gradcheck_tolerance = 1e-4;
  std::size_t gradcheck_max_elements = 8;
  std::size_t inspect_video = 0;

  // paths
  std::string data_dir = "data";
  std::string checkpoint_in;
  std::string checkpoint_out = "dip.ckpt";
  std::string metrics_out;
  std::string out_dir = "inspect";

  synth::SynthConfig synth_config() const;
  model::ModelConfig model_config() const;
  train::TrainConfig train_config() const;

  std::uint64_t init_seed() const;
  std::uint64_t eval_seed() const;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Unknown keys and wrongly typed values throw ConfigError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& cfg, int indent = 2);

std::vector<std::string> run_config_keys();

}  // namespace dip
