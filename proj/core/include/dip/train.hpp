#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dip/autodiff.hpp"
#include "dip/checkpoint.hpp"
#include "dip/model.hpp"
#include "dip/param_store.hpp"
#include "dip/synth.hpp"

namespace dip::train {

struct TrainConfig {
  double lr = 5e-4;
  std::size_t batch_size = 4;
  double alpha_ema = 0.99;
  double d_sti = 1.0;
  double lambda_h = 0.5;
  double lambda_v = 0.5;
  // Steps of the diffusion process behind the DA targets. When it exceeds
  // the model's differentiable step count, targets come from the spectral
  // path at this t and are held constant.
  std::size_t t_diffusion = 20;
  double da_weight = 1.0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Decoupled weight decay Adam. Decay applies to rank-2 (matrix) parameters only.
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(const ParamStore& params);

  void step(ParamStore& params, const TrainConfig& cfg);

  std::size_t steps_taken() const { return t_; }
  const ParamStore& first_moment() const { return m_; }
  const ParamStore& second_moment() const { return v_; }

  void append_records(std::vector<NamedTensor>& records) const;
  void load_records(const std::vector<NamedTensor>& records);

 private:
  ParamStore m_;
  ParamStore v_;
  std::size_t t_ = 0;
};

// teacher <- alpha * teacher + (1 - alpha) * student, elementwise. Throws
// ShapeError when the stores differ in names or shapes.
void ema_update(ParamStore& teacher, const ParamStore& student, double alpha);

struct StepLosses {
  double cce = 0.0;
  double sti = 0.0;
  double da = 0.0;
  double total = 0.0;
};

// F_pool of a clip under a no-gradient pass.
Tensor pooled_features(const ParamStore& params, const Tensor& frames, const model::ModelConfig& cfg);

// DA loss of one forward pass, with the target distances chosen per
// TrainConfig::t_diffusion.
Var da_term(Graph& g, const ParamStore& params, const model::Forward& f, const model::ModelConfig& mcfg,
            const TrainConfig& tcfg);

struct ClipObjective {
  Var total;  // weighted contribution of this clip to the batch loss
  Var cce;
  Var da;
  std::optional<Var> sti;
};

// Per-clip share of the batch objective
//   mean_b cce_b + da_weight * mean_b da_b + sti(anchor)
// where the anchor is classification clip 0. `f_pos`/`f_neg` are the
// teacher features and are only used when `with_sti` is set.
ClipObjective clip_objective(Graph& g, const ParamStore& student, const synth::Clip& clip,
                             std::size_t batch_size, bool with_sti, const Tensor& f_pos,
                             const Tensor& f_neg, const model::ModelConfig& mcfg, const TrainConfig& tcfg);

// Full batch objective on a single graph (used by the gradient check).
Var batch_objective(Graph& g, const ParamStore& student, const synth::TripletBatch& batch,
                    const Tensor& f_pos, const Tensor& f_neg, const model::ModelConfig& mcfg,
                    const TrainConfig& tcfg);

/// One optimisation step: teacher encodes positive and negative, student
/// computes the batch objective and is updated by AdamW, then the teacher
/// takes an EMA step. Throws NumericalError on a non-finite loss.
StepLosses train_step(const synth::TripletBatch& batch, ParamStore& student, ParamStore& teacher,
                      AdamW& optimizer, const model::ModelConfig& mcfg, const TrainConfig& tcfg);

struct TrainingState {
  ParamStore student;
  ParamStore teacher;
  AdamW optimizer;
  std::size_t step = 0;
};

// Student from make_params(seed), teacher a copy of it.
TrainingState init_state(const model::ModelConfig& cfg, std::uint64_t seed);

// Records: student/*, teacher/*, adam.m/*, adam.v/*, meta.step.
void save_state(const std::filesystem::path& path, const TrainingState& state);
TrainingState load_state(const std::filesystem::path& path, const model::ModelConfig& cfg);

// Builds the batch for a given step; depends only on (seed, step).
synth::TripletBatch batch_for_step(const std::vector<synth::VideoPair>& pairs, const synth::SynthConfig& scfg,
                                   const TrainConfig& tcfg, std::size_t step);

struct StepRecord {
  std::size_t step = 0;  // 1-based count of completed steps
  StepLosses losses;
};

std::string to_json_line(const StepRecord& record);

struct LoopHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const TrainingState&)> on_checkpoint;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
};

// Advances `state` until state.step == until_step.
void run_training(TrainingState& state, const std::vector<synth::VideoPair>& pairs,
                  const synth::SynthConfig& scfg, const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                  std::size_t until_step, const LoopHooks& hooks = {});

struct MetricsReport {
  double auc = 0.0;
  double acc = 0.0;
  std::size_t n_videos = 0;
  std::vector<double> video_scores;
  std::vector<int> labels;
  std::vector<double> loss_curve;
};

std::string to_json(const MetricsReport& report);

// Scores each video as the mean fake-probability of `clips_per_video`
// sampled clips. Throws std::invalid_argument for a single-class set.
MetricsReport evaluate(const ParamStore& params, const std::vector<synth::Video>& videos,
                       const model::ModelConfig& cfg, std::size_t clips_per_video, std::uint64_t seed);

}  // namespace dip::train
