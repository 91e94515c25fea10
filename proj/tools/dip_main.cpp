#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dip/dataset.hpp"
#include "dip/gradcheck.hpp"
#include "dip/idm.hpp"
#include "dip/run_config.hpp"
#include "dip/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kNumerical = 2;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

dip::RunConfig resolve_config(const Options& opt) {
  dip::RunConfig cfg = opt.config_path.empty() ? dip::RunConfig{} : dip::load_run_config(opt.config_path);
  if (opt.seed) cfg.seed = *opt.seed;
  cfg.validate();
  return cfg;
}

dip::train::TrainingState load_or_init(const dip::RunConfig& cfg, const std::string& path) {
  const auto mcfg = cfg.model_config();
  if (path.empty()) return dip::train::init_state(mcfg, cfg.init_seed());
  return dip::train::load_state(path, mcfg);
}

void write_csv(const fs::path& path, const dip::Tensor& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.precision(17);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) os << (j ? "," : "") << m.at(i, j);
    os << '\n';
  }
}

int cmd_synth(const Options& opt) {
  dip::RunConfig cfg = resolve_config(opt);
  if (!opt.out.empty()) cfg.data_dir = opt.out;
  const auto data = dip::dataset::generate(cfg);
  dip::dataset::write(cfg.data_dir, data, cfg);
  json j;
  j["data_dir"] = cfg.data_dir;
  j["train_pairs"] = data.train.size();
  j["heldout_pairs"] = data.heldout.size();
  j["entries"] = 2 * data.train.size();
  std::cout << j.dump() << std::endl;
  return kOk;
}

int cmd_train(const Options& opt) {
  dip::RunConfig cfg = resolve_config(opt);
  if (!opt.out.empty()) cfg.checkpoint_out = opt.out;
  const auto data = dip::dataset::read(cfg.data_dir);
  const auto mcfg = cfg.model_config();
  const auto tcfg = cfg.train_config();
  auto state = load_or_init(cfg, cfg.checkpoint_in);

  std::ofstream metrics;
  if (!cfg.metrics_out.empty()) {
    metrics.open(cfg.metrics_out, state.step > 0 ? std::ios::app : std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot open metrics file " + cfg.metrics_out);
  }
  dip::train::LoopHooks hooks;
  hooks.on_step = [&](const dip::train::StepRecord& r) {
    const std::string line = dip::train::to_json_line(r);
    std::cout << line << '\n';
    if (metrics.is_open()) metrics << line << '\n';
  };
  hooks.checkpoint_every = cfg.checkpoint_every;
  hooks.on_checkpoint = [&](const dip::train::TrainingState& s) {
    dip::train::save_state(cfg.checkpoint_out, s);
    std::cout.flush();
    if (metrics.is_open()) metrics.flush();
  };
  dip::train::run_training(state, data.train, cfg.synth_config(), mcfg, tcfg, cfg.steps, hooks);
  dip::train::save_state(cfg.checkpoint_out, state);
  std::cout.flush();
  return kOk;
}

int cmd_eval(const Options& opt) {
  const dip::RunConfig cfg = resolve_config(opt);
  const auto data = dip::dataset::read(cfg.data_dir);
  const std::string ckpt = cfg.checkpoint_in.empty() ? cfg.checkpoint_out : cfg.checkpoint_in;
  const auto state = load_or_init(cfg, ckpt);
  const auto report =
      dip::train::evaluate(state.student, data.heldout_videos(), cfg.model_config(), cfg.eval_clips_per_video,
                           cfg.eval_seed());
  const std::string text = dip::train::to_json(report);
  std::cout << text << std::endl;
  if (!opt.out.empty()) std::ofstream(opt.out) << text << '\n';
  return kOk;
}

int cmd_gradcheck(const Options& opt) {
  const dip::RunConfig cfg = resolve_config(opt);
  const auto mcfg = cfg.model_config();
  // DA targets must sit on the differentiable path for finite differences to agree.
  auto tcfg = cfg.train_config();
  tcfg.t_diffusion = mcfg.diffusion_steps;
  const auto state = load_or_init(cfg, cfg.checkpoint_in);
  const auto scfg = cfg.synth_config();
  const auto pair = dip::synth::synth_video_pair(scfg, 0, scfg.seed);
  const auto batch = dip::synth::make_triplet(pair.real, pair.fake, scfg, cfg.seed, tcfg.batch_size);
  const dip::Tensor f_pos = dip::train::pooled_features(state.teacher, batch.positive.frames, mcfg);
  const dip::Tensor f_neg = dip::train::pooled_features(state.teacher, batch.negative.frames, mcfg);

  dip::GradCheckOptions gopt;
  gopt.eps = cfg.gradcheck_eps;
  gopt.max_elements_per_param = cfg.gradcheck_max_elements;
  gopt.seed = cfg.seed;
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = dip::finite_diff_check(
      [&](dip::Graph& g, const dip::ParamStore& p) {
        return dip::train::batch_objective(g, p, batch, f_pos, f_neg, mcfg, tcfg);
      },
      state.student, gopt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = report.max_rel_error <= cfg.gradcheck_tolerance;

  json j;
  j["max_rel_error"] = report.max_rel_error;
  j["tolerance"] = cfg.gradcheck_tolerance;
  j["pass"] = pass;
  j["worst_param"] = report.worst_param;
  j["worst_index"] = report.worst_index;
  j["worst_analytic"] = report.worst_analytic;
  j["worst_numeric"] = report.worst_numeric;
  j["elements_checked"] = report.elements_checked;
  j["loss"] = report.loss;
  for (const auto& [name, err] : report.per_param)
    if (name == "idm.mu" || name == "dica.tau1" || name == "da.tau2") j["rel_error_" + name] = err;
  j["seconds"] = secs;
  std::cout << j.dump() << std::endl;
  return pass ? kOk : kNumerical;
}

int cmd_inspect(const Options& opt) {
  dip::RunConfig cfg = resolve_config(opt);
  if (!opt.out.empty()) cfg.out_dir = opt.out;
  const auto data = dip::dataset::read(cfg.data_dir);
  const auto videos = data.heldout_videos();
  if (cfg.inspect_video >= videos.size()) throw dip::ConfigError("inspect_video is out of range");
  const auto& video = videos[cfg.inspect_video];
  const std::string ckpt = cfg.checkpoint_in.empty() ? cfg.checkpoint_out : cfg.checkpoint_in;
  const auto state = load_or_init(cfg, fs::exists(ckpt) ? ckpt : std::string{});
  const auto mcfg = cfg.model_config();

  const auto clip = dip::synth::clip_at(video, 0, cfg.clip_length);
  dip::Graph g(false);
  const auto f = dip::model::forward(g, state.student, clip.frames, mcfg);
  const auto tm = dip::idm::transition_matrix(f.diffusion.weights.value());
  const dip::Tensor dt = dip::idm::diffusion_distance_spectral(tm, cfg.t_diffusion);
  const auto blocks = dip::idm::split_blocks(dt);

  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  write_csv(dir / "W.csv", tm.weights);
  write_csv(dir / "P.csv", tm.transition);
  write_csv(dir / "Dt.csv", dt);
  write_csv(dir / "Dt_hh.csv", blocks.hh);
  write_csv(dir / "Dt_vv.csv", blocks.vv);
  write_csv(dir / "Dt_hv.csv", blocks.hv);
  write_csv(dir / "Dt_vh.csv", blocks.vh);

  json j;
  j["out_dir"] = dir.string();
  j["video"] = cfg.inspect_video;
  j["label"] = dip::synth::to_string(video.label);
  j["t"] = cfg.t_diffusion;
  j["fake_probability"] = dip::model::fake_probability(f);
  std::cout << j.dump() << std::endl;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dip: directional inconsistency pipeline on synthetic video"};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Override the global seed");
    sub->add_option("--out", opt.out, "Output path override");
  };
  auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset");
  auto* train = app.add_subcommand("train", "Train and checkpoint");
  auto* eval = app.add_subcommand("eval", "Evaluate on the held-out split");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  auto* inspect = app.add_subcommand("inspect", "Dump W, P and Dt as CSV");
  for (auto* sub : {synth, train, eval, gradcheck, inspect}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(opt);
    if (*train) return cmd_train(opt);
    if (*eval) return cmd_eval(opt);
    if (*gradcheck) return cmd_gradcheck(opt);
    if (*inspect) return cmd_inspect(opt);
  } catch (const dip::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
