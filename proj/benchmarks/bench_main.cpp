#include <random>

#include <benchmark/benchmark.h>

#include "dip/idm.hpp"
#include "dip/model.hpp"
#include "dip/run_config.hpp"
#include "dip/synth.hpp"
#include "dip/train.hpp"

using namespace dip;

namespace {

idm::TransitionMatrix random_transition(std::size_t l) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor h({l, 32}), v({l, 32});
  for (auto& x : h.values()) x = normal(rng);
  for (auto& x : v.values()) x = normal(rng);
  return idm::transition_matrix(idm::build_score_matrix(h, v, 7, 0.05));
}

void BM_DiffusionIterative(benchmark::State& state) {
  const auto tm = random_transition(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(idm::diffusion_distance_iterative(tm, 20));
}
BENCHMARK(BM_DiffusionIterative)->Arg(16)->Arg(64);

void BM_DiffusionSpectral(benchmark::State& state) {
  const auto tm = random_transition(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(idm::diffusion_distance_spectral(tm, 20));
}
BENCHMARK(BM_DiffusionSpectral)->Arg(16)->Arg(64)->Arg(196);

void BM_ModelForward(benchmark::State& state) {
  const RunConfig cfg;
  const auto mcfg = cfg.model_config();
  const auto params = model::make_params(mcfg, 1);
  const auto scfg = cfg.synth_config();
  const auto pair = synth::synth_video_pair(scfg, 0, 1);
  const auto clip = synth::clip_at(pair.fake, 0, cfg.clip_length);
  for (auto _ : state) {
    Graph g(false);
    benchmark::DoNotOptimize(model::fake_probability(model::forward(g, params, clip.frames, mcfg)));
  }
}
BENCHMARK(BM_ModelForward)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const RunConfig cfg;
  const auto mcfg = cfg.model_config();
  const auto tcfg = cfg.train_config();
  const auto scfg = cfg.synth_config();
  auto ts = train::init_state(mcfg, 1);
  const auto pair = synth::synth_video_pair(scfg, 0, 1);
  const auto batch = synth::make_triplet(pair.real, pair.fake, scfg, 1, tcfg.batch_size);
  for (auto _ : state) benchmark::DoNotOptimize(train::train_step(batch, ts.student, ts.teacher, ts.optimizer, mcfg, tcfg));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
