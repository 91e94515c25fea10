#include "dip/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "dip/idm.hpp"
#include "dip/losses.hpp"
#include "dip/metrics.hpp"
#include "dip/parallel.hpp"
#include "dip/rng.hpp"

namespace dip::train {

namespace {

constexpr std::uint64_t kBatchTag = 0x626174636800ULL;
constexpr std::uint64_t kEvalTag = 0x6576616c00ULL;

ParamStore zeros_like(const ParamStore& params) {
  ParamStore out;
  for (const auto& e : params) out.add(e.name, Tensor(e.value.shape(), 0.0));
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ShapeError("lr must be >= 0");
  if (batch_size < 2) throw ShapeError("batch_size must be >= 2 (one real and one fake clip)");
  if (!(alpha_ema > 0.0 && alpha_ema < 1.0)) throw ShapeError("alpha_ema must lie in (0, 1)");
  if (!(d_sti >= 0.0)) throw ShapeError("d_sti must be >= 0");
  if (!(lambda_h >= 0.0) || !(lambda_v >= 0.0)) throw ShapeError("lambda_h and lambda_v must be >= 0");
  if (t_diffusion < 1) throw ShapeError("t_diffusion must be >= 1");
  if (!(da_weight >= 0.0)) throw ShapeError("da_weight must be >= 0");
  if (!(weight_decay >= 0.0)) throw ShapeError("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ShapeError("beta1 and beta2 must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ShapeError("adam_eps must be > 0");
}

AdamW::AdamW(const ParamStore& params) : m_(zeros_like(params)), v_(zeros_like(params)) {}

void AdamW::step(ParamStore& params, const TrainConfig& cfg) {
  if (!params.same_layout(m_)) throw ShapeError("AdamW: parameter layout changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    Tensor& m = m_[i].value;
    Tensor& v = v_[i].value;
    const double decay = p.value.rank() == 2 ? cfg.lr * cfg.weight_decay : 0.0;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
      p.value[k] -= decay * p.value[k];
      p.value[k] -= cfg.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.adam_eps);
    }
  }
}

void AdamW::append_records(std::vector<NamedTensor>& records) const {
  append_store(records, m_, "adam.m/");
  append_store(records, v_, "adam.v/");
  records.emplace_back("adam.t", Tensor::scalar(static_cast<double>(t_)));
}

void AdamW::load_records(const std::vector<NamedTensor>& records) {
  load_store(m_, records, "adam.m/");
  load_store(v_, records, "adam.v/");
  for (const auto& [name, t] : records)
    if (name == "adam.t") t_ = static_cast<std::size_t>(t.item());
}

void ema_update(ParamStore& teacher, const ParamStore& student, double alpha) {
  if (!teacher.same_layout(student)) throw ShapeError("ema_update: teacher and student layouts differ");
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    Tensor& t = teacher[i].value;
    const Tensor& s = student[i].value;
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = alpha * t[k] + (1.0 - alpha) * s[k];
  }
}

Tensor pooled_features(const ParamStore& params, const Tensor& frames, const model::ModelConfig& cfg) {
  Graph g(false);
  return model::forward(g, params, frames, cfg).bundle.pooled.value();
}

Var da_term(Graph& g, const ParamStore& params, const model::Forward& f, const model::ModelConfig& mcfg,
            const TrainConfig& tcfg) {
  if (tcfg.t_diffusion < mcfg.diffusion_steps) {
    throw ShapeError("t_diffusion must be >= the differentiable diffusion step count");
  }
  Var d_hh = f.d_hh;
  Var d_vv = f.d_vv;
  if (tcfg.t_diffusion > mcfg.diffusion_steps) {
    const auto tm = idm::transition_matrix(f.diffusion.weights.value());
    const auto blocks = idm::split_blocks(idm::diffusion_distance_spectral(tm, tcfg.t_diffusion));
    d_hh = g.constant(blocks.hh);
    d_vv = g.constant(blocks.vv);
  }
  return losses::da_loss(f.horizontal_content, f.vertical_content, d_hh, d_vv, g.param(params, "da.tau2"));
}

ClipObjective clip_objective(Graph& g, const ParamStore& student, const synth::Clip& clip,
                             std::size_t batch_size, bool with_sti, const Tensor& f_pos,
                             const Tensor& f_neg, const model::ModelConfig& mcfg, const TrainConfig& tcfg) {
  const model::Forward f = model::forward(g, student, clip.frames, mcfg);
  ClipObjective out;
  out.cce = losses::cce_loss(f.bundle, clip.label, tcfg.lambda_h, tcfg.lambda_v);
  const double share = 1.0 / static_cast<double>(batch_size);
  out.total = ad::scale(out.cce, share);
  if (tcfg.da_weight > 0.0) {
    out.da = da_term(g, student, f, mcfg, tcfg);
    out.total = ad::add(out.total, ad::scale(out.da, tcfg.da_weight * share));
  } else {
    out.da = g.constant(Tensor::scalar(0.0));
  }
  if (with_sti) {
    out.sti = losses::sti_loss(f.bundle.pooled, g.constant(f_pos), g.constant(f_neg), tcfg.d_sti);
    out.total = ad::add(out.total, *out.sti);
  }
  return out;
}

Var batch_objective(Graph& g, const ParamStore& student, const synth::TripletBatch& batch,
                    const Tensor& f_pos, const Tensor& f_neg, const model::ModelConfig& mcfg,
                    const TrainConfig& tcfg) {
  const std::size_t n = batch.classification.size();
  Var total;
  for (std::size_t b = 0; b < n; ++b) {
    const ClipObjective obj =
        clip_objective(g, student, batch.classification[b], n, b == 0, f_pos, f_neg, mcfg, tcfg);
    total = b == 0 ? obj.total : ad::add(total, obj.total);
  }
  return total;
}

StepLosses train_step(const synth::TripletBatch& batch, ParamStore& student, ParamStore& teacher,
                      AdamW& optimizer, const model::ModelConfig& mcfg, const TrainConfig& tcfg) {
  const std::size_t n = batch.classification.size();
  if (n == 0) throw ShapeError("train_step: empty classification minibatch");

  Tensor f_pos;
  Tensor f_neg;
  parallel_for(2, [&](std::size_t i) {
    if (i == 0) f_pos = pooled_features(teacher, batch.positive.frames, mcfg);
    else f_neg = pooled_features(teacher, batch.negative.frames, mcfg);
  });

  std::vector<std::vector<std::pair<std::size_t, Tensor>>> grads(n);
  std::vector<StepLosses> parts(n);
  parallel_for(n, [&](std::size_t b) {
    Graph g;
    const ClipObjective obj =
        clip_objective(g, student, batch.classification[b], n, b == 0, f_pos, f_neg, mcfg, tcfg);
    g.backward(obj.total);
    grads[b] = g.param_grads();
    parts[b].cce = obj.cce.value().item();
    parts[b].da = obj.da.value().item();
    parts[b].sti = obj.sti ? obj.sti->value().item() : 0.0;
  });

  // Fixed reduction order keeps the step independent of the thread count.
  StepLosses out;
  student.zero_grad();
  for (std::size_t b = 0; b < n; ++b) {
    out.cce += parts[b].cce;
    out.da += parts[b].da;
    out.sti += parts[b].sti;
    for (auto& [index, grad] : grads[b]) {
      Tensor& acc = student[index].grad;
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += grad[k];
    }
  }
  out.cce /= static_cast<double>(n);
  out.da /= static_cast<double>(n);
  out.total = out.cce + out.sti + tcfg.da_weight * out.da;
  if (!std::isfinite(out.total)) {
    std::ostringstream os;
    os << "train_step: non-finite loss (cce=" << out.cce << ", sti=" << out.sti << ", da=" << out.da << ")";
    throw NumericalError(os.str());
  }
  for (const auto& e : student) require_finite(e.grad, ("gradient of " + e.name).c_str());

  optimizer.step(student, tcfg);
  ema_update(teacher, student, tcfg.alpha_ema);
  return out;
}

TrainingState init_state(const model::ModelConfig& cfg, std::uint64_t seed) {
  TrainingState s;
  s.student = model::make_params(cfg, seed);
  s.teacher = s.student;
  s.optimizer = AdamW(s.student);
  return s;
}

void save_state(const std::filesystem::path& path, const TrainingState& state) {
  std::vector<NamedTensor> records;
  append_store(records, state.student, "student/");
  append_store(records, state.teacher, "teacher/");
  state.optimizer.append_records(records);
  records.emplace_back("meta.step", Tensor::scalar(static_cast<double>(state.step)));
  write_records(path, records);
}

TrainingState load_state(const std::filesystem::path& path, const model::ModelConfig& cfg) {
  const auto records = read_records(path);
  TrainingState s = init_state(cfg, 0);
  load_store(s.student, records, "student/");
  load_store(s.teacher, records, "teacher/");
  s.optimizer.load_records(records);
  bool found = false;
  for (const auto& [name, t] : records) {
    if (name == "meta.step") {
      s.step = static_cast<std::size_t>(t.item());
      found = true;
    }
  }
  if (!found) throw std::runtime_error("checkpoint " + path.string() + " has no meta.step record");
  return s;
}

synth::TripletBatch batch_for_step(const std::vector<synth::VideoPair>& pairs, const synth::SynthConfig& scfg,
                                   const TrainConfig& tcfg, std::size_t step) {
  if (pairs.empty()) throw std::invalid_argument("training set is empty");
  Rng rng = make_rng(tcfg.seed, {kBatchTag, step});
  const std::size_t pick = static_cast<std::size_t>(rng() % pairs.size());
  const auto& pair = pairs[pick];
  return synth::make_triplet(pair.real, pair.fake, scfg, rng(), tcfg.batch_size);
}

std::string to_json_line(const StepRecord& record) {
  nlohmann::ordered_json j;
  j["step"] = record.step;
  j["l_cce"] = record.losses.cce;
  j["l_sti"] = record.losses.sti;
  j["l_da"] = record.losses.da;
  j["l_total"] = record.losses.total;
  return j.dump();
}

void run_training(TrainingState& state, const std::vector<synth::VideoPair>& pairs,
                  const synth::SynthConfig& scfg, const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                  std::size_t until_step, const LoopHooks& hooks) {
  tcfg.validate();
  while (state.step < until_step) {
    const synth::TripletBatch batch = batch_for_step(pairs, scfg, tcfg, state.step);
    const StepLosses l = train_step(batch, state.student, state.teacher, state.optimizer, mcfg, tcfg);
    ++state.step;
    if (hooks.on_step) hooks.on_step({state.step, l});
    if (hooks.on_checkpoint && hooks.checkpoint_every > 0 && state.step % hooks.checkpoint_every == 0) {
      hooks.on_checkpoint(state);
    }
  }
}

std::string to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["auc"] = report.auc;
  j["acc"] = report.acc;
  j["n_videos"] = report.n_videos;
  j["video_scores"] = report.video_scores;
  j["labels"] = report.labels;
  if (!report.loss_curve.empty()) j["loss_curve"] = report.loss_curve;
  return j.dump();
}

MetricsReport evaluate(const ParamStore& params, const std::vector<synth::Video>& videos,
                       const model::ModelConfig& cfg, std::size_t clips_per_video, std::uint64_t seed) {
  if (clips_per_video == 0) throw std::invalid_argument("evaluate: clips_per_video must be >= 1");
  MetricsReport r;
  r.n_videos = videos.size();
  r.video_scores.assign(videos.size(), 0.0);
  r.labels.resize(videos.size());
  for (std::size_t i = 0; i < videos.size(); ++i) r.labels[i] = videos[i].label == synth::Label::kFake ? 1 : 0;
  const bool has_real = std::count(r.labels.begin(), r.labels.end(), 0) > 0;
  const bool has_fake = std::count(r.labels.begin(), r.labels.end(), 1) > 0;
  if (!has_real || !has_fake) throw std::invalid_argument("evaluate: need at least one real and one fake video");

  parallel_for(videos.size(), [&](std::size_t i) {
    const auto& v = videos[i];
    const auto clips = synth::sample_clips(
        v, clips_per_video, cfg.ste.frames,
        derive_seed(seed, {kEvalTag, static_cast<std::uint64_t>(v.source_id), static_cast<std::uint64_t>(v.label)}));
    double s = 0.0;
    for (const auto& c : clips) {
      Graph g(false);
      s += model::fake_probability(model::forward(g, params, c.frames, cfg));
    }
    r.video_scores[i] = s / static_cast<double>(clips.size());
  });
  r.auc = metrics::auc(r.video_scores, r.labels);
  r.acc = metrics::accuracy(r.video_scores, r.labels, 0.5);
  return r;
}

}  // namespace dip::train
