#include "dip/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "dip/rng.hpp"

namespace dip::synth {

std::string to_string(Label label) { return label == Label::kReal ? "real" : "fake"; }

std::string to_string(JitterAxis axis) {
  switch (axis) {
    case JitterAxis::kHorizontal: return "horizontal";
    case JitterAxis::kVertical: return "vertical";
    case JitterAxis::kBoth: return "both";
  }
  return "both";
}

JitterAxis parse_jitter_axis(const std::string& s) {
  if (s == "horizontal") return JitterAxis::kHorizontal;
  if (s == "vertical") return JitterAxis::kVertical;
  if (s == "both") return JitterAxis::kBoth;
  throw ShapeError("direction_bias must be horizontal, vertical or both; got '" + s + "'");
}

void SynthConfig::validate() const {
  if (clip_length < 2) throw ShapeError("clip_length (T) must be at least 2");
  if (frame_size == 0 || patch_size == 0 || frame_size % patch_size != 0) {
    throw ShapeError("frame_size (M) must be a positive multiple of patch_size (P)");
  }
  if (video_length < clip_length) throw ShapeError("video_length must be at least clip_length");
  if (fake_region.rows == 0 || fake_region.cols == 0 ||
      fake_region.row0 + fake_region.rows > frame_size ||
      fake_region.col0 + fake_region.cols > frame_size) {
    throw ShapeError("fake_region lies outside the frame");
  }
  if (!(motion_amplitude >= 0.0)) throw ShapeError("motion_amplitude must be non-negative");
  if (!(fake_jitter_strength >= 0.0)) throw ShapeError("fake_jitter_strength must be non-negative");
}

namespace {

constexpr std::size_t kWaves = 8;

struct Texture {
  // Per channel, kWaves plane waves: value = 0.5 + sum amp * sin(fx*x + fy*y + phase).
  std::array<std::array<double, kWaves>, 3> amp{}, fx{}, fy{}, phase{};

  double operator()(double x, double y, std::size_t ch) const {
    double v = 0.5;
    for (std::size_t k = 0; k < kWaves; ++k) v += amp[ch][k] * std::sin(fx[ch][k] * x + fy[ch][k] * y + phase[ch][k]);
    return v;
  }
};

Texture random_texture(Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Texture tex;
  // Shared spatial structure across channels with per-channel weights keeps
  // the texture colourful but coherent.
  std::array<double, kWaves> fx{}, fy{}, ph{};
  for (std::size_t k = 0; k < kWaves; ++k) {
    const double freq = 0.15 + 0.65 * unit(rng);
    const double ang = 2.0 * std::numbers::pi * unit(rng);
    fx[k] = freq * std::cos(ang);
    fy[k] = freq * std::sin(ang);
    ph[k] = 2.0 * std::numbers::pi * unit(rng);
  }
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double total = 0.0;
    for (std::size_t k = 0; k < kWaves; ++k) total += (tex.amp[ch][k] = 0.3 + 0.7 * unit(rng));
    for (std::size_t k = 0; k < kWaves; ++k) {
      tex.amp[ch][k] *= 0.45 / total;
      tex.fx[ch][k] = fx[k];
      tex.fy[ch][k] = fy[k];
      tex.phase[ch][k] = ph[k] + 0.5 * unit(rng);
    }
  }
  return tex;
}

// Smooth trajectory: linear drift plus one slow sinusoid.
struct Trajectory {
  double drift = 0.0, amp = 0.0, omega = 0.0, phase = 0.0;
  double at(double t) const { return drift * t + amp * std::sin(omega * t + phase); }
};

Trajectory random_trajectory(Rng& rng, double amplitude) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Trajectory tr;
  tr.drift = amplitude * (unit(rng) - 0.5);
  tr.amp = amplitude;
  const double period = 12.0 + 12.0 * unit(rng);
  tr.omega = 2.0 * std::numbers::pi / period;
  tr.phase = 2.0 * std::numbers::pi * unit(rng);
  return tr;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

std::size_t idx4(const Shape& s, std::size_t t, std::size_t r, std::size_t c, std::size_t ch) {
  return ((t * s[1] + r) * s[2] + c) * s[3] + ch;
}

}  // namespace

VideoPair synth_video_pair(const SynthConfig& cfg, int source_id, std::uint64_t seed) {
  cfg.validate();
  const auto id = static_cast<std::uint64_t>(source_id);
  Rng scene_rng = make_rng(seed, {0x7363656eULL, id});
  const Texture tex = random_texture(scene_rng);
  const Trajectory tx = random_trajectory(scene_rng, cfg.motion_amplitude);
  const Trajectory ty = random_trajectory(scene_rng, cfg.motion_amplitude);

  const std::size_t f = cfg.video_length;
  const std::size_t m = cfg.frame_size;
  std::vector<double> jx(f, 0.0), jy(f, 0.0);
  Rng jitter_rng = make_rng(seed, {0x6a697474ULL, id});
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  for (std::size_t t = 0; t < f; ++t) {
    const double ux = sym(jitter_rng);
    const double uy = sym(jitter_rng);
    if (cfg.direction_bias != JitterAxis::kVertical) jx[t] = cfg.fake_jitter_strength * ux;
    if (cfg.direction_bias != JitterAxis::kHorizontal) jy[t] = cfg.fake_jitter_strength * uy;
  }

  VideoPair pair;
  pair.real = {Tensor({f, m, m, 3}), Label::kReal, source_id};
  pair.fake = {Tensor({f, m, m, 3}), Label::kFake, source_id};
  const Shape& s = pair.real.frames.shape();
  const Region& reg = cfg.fake_region;
  for (std::size_t t = 0; t < f; ++t) {
    const double ox = tx.at(static_cast<double>(t));
    const double oy = ty.at(static_cast<double>(t));
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < m; ++c) {
        const bool inside = r >= reg.row0 && r < reg.row0 + reg.rows && c >= reg.col0 &&
                            c < reg.col0 + reg.cols;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double x = static_cast<double>(c);
          const double y = static_cast<double>(r);
          const double real = clamp01(tex(x + ox, y + oy, ch));
          pair.real.frames[idx4(s, t, r, c, ch)] = real;
          pair.fake.frames[idx4(s, t, r, c, ch)] =
              inside ? clamp01(tex(x + (ox + jx[t]), y + (oy + jy[t]), ch)) : real;
        }
      }
    }
  }
  return pair;
}

Clip clip_at(const Video& video, std::size_t start, std::size_t clip_length, int clip_index) {
  if (start + clip_length > video.length()) throw ShapeError("clip window exceeds video length");
  const Shape& s = video.frames.shape();
  const std::size_t frame_elems = s[1] * s[2] * s[3];
  std::vector<double> data(video.frames.values().begin() + static_cast<std::ptrdiff_t>(start * frame_elems),
                           video.frames.values().begin() +
                               static_cast<std::ptrdiff_t>((start + clip_length) * frame_elems));
  Clip clip;
  clip.frames = Tensor({clip_length, s[1], s[2], s[3]}, std::move(data));
  clip.label = video.label;
  clip.source_id = video.source_id;
  clip.clip_index = clip_index;
  clip.start = start;
  return clip;
}

std::vector<Clip> sample_clips(const Video& video, std::size_t n_clips, std::size_t clip_length,
                               std::uint64_t seed) {
  if (clip_length == 0 || video.length() < clip_length) {
    throw ShapeError("sample_clips: video shorter than clip length");
  }
  const std::size_t offsets = video.length() - clip_length + 1;
  Rng rng = make_rng(seed, {0x636c6970ULL, static_cast<std::uint64_t>(video.source_id)});
  std::vector<std::size_t> starts;
  if (n_clips <= offsets) {
    std::vector<std::size_t> all(offsets);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    starts.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_clips));
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, offsets - 1);
    for (std::size_t i = 0; i < n_clips; ++i) starts.push_back(pick(rng));
  }
  std::vector<Clip> clips;
  clips.reserve(n_clips);
  for (std::size_t i = 0; i < n_clips; ++i) {
    clips.push_back(clip_at(video, starts[i], clip_length, static_cast<int>(i)));
  }
  return clips;
}

namespace {

void gaussian_blur(Tensor& frames, double sigma) {
  const Shape s = frames.shape();
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    const double w = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = w;
    total += w;
  }
  for (auto& w : kernel) w /= total;
  const auto h = static_cast<std::ptrdiff_t>(s[1]);
  const auto w = static_cast<std::ptrdiff_t>(s[2]);
  auto clamp_idx = [](std::ptrdiff_t i, std::ptrdiff_t n) { return std::clamp<std::ptrdiff_t>(i, 0, n - 1); };
  Tensor tmp(s);
  // Horizontal then vertical pass, edges replicated.
  for (std::size_t t = 0; t < s[0]; ++t)
    for (std::ptrdiff_t r = 0; r < h; ++r)
      for (std::ptrdiff_t c = 0; c < w; ++c)
        for (std::size_t ch = 0; ch < s[3]; ++ch) {
          double acc = 0.0;
          for (std::ptrdiff_t k = -radius; k <= radius; ++k)
            acc += kernel[static_cast<std::size_t>(k + radius)] *
                   frames[idx4(s, t, static_cast<std::size_t>(r), static_cast<std::size_t>(clamp_idx(c + k, w)), ch)];
          tmp[idx4(s, t, static_cast<std::size_t>(r), static_cast<std::size_t>(c), ch)] = acc;
        }
  for (std::size_t t = 0; t < s[0]; ++t)
    for (std::ptrdiff_t r = 0; r < h; ++r)
      for (std::ptrdiff_t c = 0; c < w; ++c)
        for (std::size_t ch = 0; ch < s[3]; ++ch) {
          double acc = 0.0;
          for (std::ptrdiff_t k = -radius; k <= radius; ++k)
            acc += kernel[static_cast<std::size_t>(k + radius)] *
                   tmp[idx4(s, t, static_cast<std::size_t>(clamp_idx(r + k, h)), static_cast<std::size_t>(c), ch)];
          frames[idx4(s, t, static_cast<std::size_t>(r), static_cast<std::size_t>(c), ch)] = acc;
        }
}

void scale_saturation(Tensor& frames, double factor) {
  auto& v = frames.values();
  for (std::size_t p = 0; p + 2 < v.size(); p += 3) {
    const double gray = (v[p] + v[p + 1] + v[p + 2]) / 3.0;
    for (std::size_t ch = 0; ch < 3; ++ch) v[p + ch] = gray + factor * (v[p + ch] - gray);
  }
}

}  // namespace

Clip spatial_augment(const Clip& clip, std::uint64_t seed, const SpatialAugmentOptions& options) {
  Rng rng = make_rng(seed, {0x73706174ULL});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Every draw happens regardless of which branches fire, so the stream
  // consumed is fixed per seed.
  const bool do_blur = unit(rng) < options.p_blur;
  const bool do_sat = unit(rng) < options.p_saturation;
  const bool do_noise = unit(rng) < options.p_noise;
  const double blur_sigma = options.blur_sigma.value_or(0.5 + 1.5 * unit(rng));
  const double sat = options.saturation.value_or(0.7 + 0.6 * unit(rng));
  const double noise_sigma = options.noise_sigma.value_or(0.01 + 0.04 * unit(rng));

  Clip out = clip;
  if (!do_blur && !do_sat && !do_noise) return out;
  if (do_blur) gaussian_blur(out.frames, blur_sigma);
  if (do_sat) scale_saturation(out.frames, sat);
  if (do_noise) {
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (auto& v : out.frames.values()) v += noise(rng);
  }
  for (auto& v : out.frames.values()) v = clamp01(v);
  return out;
}

Clip repeat_previous(const Clip& clip, std::vector<std::size_t> frames) {
  std::sort(frames.begin(), frames.end());
  Clip out = clip;
  const Shape& s = out.frames.shape();
  const std::size_t frame_elems = s[1] * s[2] * s[3];
  auto& v = out.frames.values();
  for (auto i : frames) {
    if (i == 0 || i >= s[0]) throw ShapeError("repeat_previous: frame index out of range");
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((i - 1) * frame_elems), frame_elems,
                v.begin() + static_cast<std::ptrdiff_t>(i * frame_elems));
  }
  return out;
}

Clip temporal_augment(const Clip& clip, std::uint64_t seed, const TemporalAugmentOptions& options) {
  const std::size_t t = clip.length();
  if (t < 3) throw ShapeError("temporal_augment: clip needs at least 3 frames");
  Rng rng = make_rng(seed, {0x74656d70ULL});
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto pick = [&](std::size_t lo, std::size_t hi) {
    // k in {1, 2} distinct frames from [lo, hi].
    std::vector<std::size_t> pool(hi - lo + 1);
    std::iota(pool.begin(), pool.end(), lo);
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::size_t k = std::min<std::size_t>(pool.size(), unit(rng) < 0.5 ? 1 : 2);
    pool.resize(k);
    return pool;
  };

  const bool drop = unit(rng) < options.p_drop;
  const auto dropped = pick(1, t - 2);
  const bool repeat = unit(rng) < options.p_repeat;
  const auto repeated = pick(1, t - 1);

  Clip out = clip;
  // Dropped interior frames are filled by repeating their predecessor.
  if (drop) out = repeat_previous(out, dropped);
  if (repeat) out = repeat_previous(out, repeated);
  return out;
}

TripletBatch make_triplet(const Video& real, const Video& fake, const SynthConfig& cfg,
                          std::uint64_t seed, std::size_t batch_size) {
  if (real.label != Label::kReal || fake.label != Label::kFake || real.source_id != fake.source_id ||
      real.frames.shape() != fake.frames.shape()) {
    throw ShapeError("make_triplet: videos are not a real/fake pair");
  }
  if (batch_size < 2) throw ShapeError("make_triplet: batch_size must be at least 2");
  const std::size_t t = cfg.clip_length;
  const std::size_t offsets = real.length() - t + 1;
  Rng rng = make_rng(seed, {0x74726970ULL, static_cast<std::uint64_t>(real.source_id)});
  std::uniform_int_distribution<std::size_t> pick(0, offsets - 1);

  const std::size_t anchor_start = pick(rng);
  std::size_t pos_start = pick(rng);
  if (offsets > 1) {
    while (pos_start == anchor_start) pos_start = pick(rng);
  }
  const std::size_t neg_start = pick(rng);

  auto augment = [&](const Clip& c) {
    const std::uint64_t s1 = rng();
    const std::uint64_t s2 = rng();
    return temporal_augment(spatial_augment(c, s1), s2);
  };

  TripletBatch batch;
  batch.anchor = clip_at(real, anchor_start, t, 0);
  batch.positive = augment(clip_at(real, pos_start, t, 1));
  batch.negative = augment(clip_at(fake, neg_start, t, 2));

  batch.classification.push_back(batch.anchor);
  batch.classification.push_back(clip_at(fake, anchor_start, t, 3));
  if (batch_size > 2) batch.classification.push_back(batch.positive);
  if (batch_size > 3) batch.classification.push_back(batch.negative);
  for (std::size_t i = batch.classification.size(); i < batch_size; ++i) {
    const Video& src = (i % 2 == 0) ? real : fake;
    batch.classification.push_back(augment(clip_at(src, pick(rng), t, static_cast<int>(i + 2))));
  }
  return batch;
}

DiscontinuityStat temporal_discontinuity(const Tensor& frames, const Region& region,
                                         std::size_t max_shift) {
  const Shape& s = frames.shape();
  if (frames.rank() != 4 || s[0] < 3) throw ShapeError("temporal_discontinuity: need >= 3 frames");
  if (region.rows <= 2 * max_shift || region.cols <= 2 * max_shift) {
    throw ShapeError("temporal_discontinuity: region too small for the search range");
  }
  const auto rs = static_cast<std::ptrdiff_t>(max_shift);
  auto ssd = [&](std::size_t t, std::ptrdiff_t dy, std::ptrdiff_t dx) {
    double acc = 0.0;
    for (std::size_t r = region.row0 + max_shift; r < region.row0 + region.rows - max_shift; ++r)
      for (std::size_t c = region.col0 + max_shift; c < region.col0 + region.cols - max_shift; ++c)
        for (std::size_t ch = 0; ch < s[3]; ++ch) {
          const auto rr = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(r) + dy);
          const auto cc = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(c) + dx);
          const double d = frames[idx4(s, t + 1, r, c, ch)] - frames[idx4(s, t, rr, cc, ch)];
          acc += d * d;
        }
    return acc;
  };
  auto refine = [](double lo, double mid, double hi) {
    const double denom = lo - 2.0 * mid + hi;
    return denom > 0.0 ? 0.5 * (lo - hi) / denom : 0.0;
  };

  std::vector<double> shift_x, shift_y;
  for (std::size_t t = 0; t + 1 < s[0]; ++t) {
    double best = std::numeric_limits<double>::infinity();
    std::ptrdiff_t bx = 0, by = 0;
    for (std::ptrdiff_t dy = -rs; dy <= rs; ++dy)
      for (std::ptrdiff_t dx = -rs; dx <= rs; ++dx) {
        const double v = ssd(t, dy, dx);
        if (v < best) {
          best = v;
          bx = dx;
          by = dy;
        }
      }
    double fx = static_cast<double>(bx);
    double fy = static_cast<double>(by);
    if (bx > -rs && bx < rs) fx += refine(ssd(t, by, bx - 1), best, ssd(t, by, bx + 1));
    if (by > -rs && by < rs) fy += refine(ssd(t, by - 1, bx), best, ssd(t, by + 1, bx));
    shift_x.push_back(fx);
    shift_y.push_back(fy);
  }
  DiscontinuityStat stat;
  for (std::size_t t = 0; t + 1 < shift_x.size(); ++t) {
    stat.horizontal += (shift_x[t + 1] - shift_x[t]) * (shift_x[t + 1] - shift_x[t]);
    stat.vertical += (shift_y[t + 1] - shift_y[t]) * (shift_y[t + 1] - shift_y[t]);
  }
  const auto n = static_cast<double>(shift_x.size() - 1);
  stat.horizontal /= n;
  stat.vertical /= n;
  return stat;
}

}  // namespace dip::synth
