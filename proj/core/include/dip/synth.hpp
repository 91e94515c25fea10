#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dip/tensor.hpp"

namespace dip::synth {

enum class Label : int { kReal = 0, kFake = 1 };
enum class JitterAxis { kHorizontal, kVertical, kBoth };

std::string to_string(Label label);
std::string to_string(JitterAxis axis);
JitterAxis parse_jitter_axis(const std::string& s);

struct Region {
  std::size_t row0 = 8;
  std::size_t col0 = 8;
  std::size_t rows = 16;
  std::size_t cols = 16;
};

struct SynthConfig {
  std::size_t clip_length = 4;    // T
  std::size_t frame_size = 32;    // M
  std::size_t patch_size = 8;     // P
  std::size_t video_length = 16;  // frames per generated video
  double motion_amplitude = 1.0;
  double fake_jitter_strength = 3.0;
  Region fake_region;
  JitterAxis direction_bias = JitterAxis::kBoth;
  std::uint64_t seed = 7;

  // Throws ShapeError naming the offending field.
  void validate() const;
};

// A whole generated video: frames is (F, M, M, 3) with values in [0, 1].
struct Video {
  Tensor frames;
  Label label = Label::kReal;
  int source_id = 0;

  std::size_t length() const { return frames.dim(0); }
};

struct VideoPair {
  Video real;
  Video fake;
};

struct Clip {
  Tensor frames;  // (T, M, M, 3)
  Label label = Label::kReal;
  int source_id = 0;
  int clip_index = 0;
  std::size_t start = 0;  // first frame inside the parent video

  std::size_t length() const { return frames.dim(0); }
  std::size_t frame_size() const { return frames.dim(1); }
};

struct TripletBatch {
  Clip anchor;
  Clip positive;
  Clip negative;
  std::vector<Clip> classification;
};

// Real video: a smooth multi-sinusoid texture translated along a low-pass
// trajectory. Fake video: identical except inside cfg.fake_region, where an
// independent per-frame displacement of up to fake_jitter_strength pixels is
// added along the configured axis.
VideoPair synth_video_pair(const SynthConfig& cfg, int source_id, std::uint64_t seed);

// Windows of T consecutive frames. Start offsets are drawn without
// replacement when n_clips fits, otherwise with replacement.
std::vector<Clip> sample_clips(const Video& video, std::size_t n_clips, std::size_t clip_length,
                               std::uint64_t seed);

Clip clip_at(const Video& video, std::size_t start, std::size_t clip_length, int clip_index = 0);

struct SpatialAugmentOptions {
  double p_blur = 0.5;
  double p_noise = 0.5;
  double p_saturation = 0.5;
  std::optional<double> blur_sigma;   // drawn from [0.5, 2.0] when unset
  std::optional<double> noise_sigma;  // drawn from [0.01, 0.05] when unset
  std::optional<double> saturation;   // drawn from [0.7, 1.3] when unset
};

Clip spatial_augment(const Clip& clip, std::uint64_t seed, const SpatialAugmentOptions& options = {});

struct TemporalAugmentOptions {
  double p_drop = 0.5;
  double p_repeat = 0.5;
};

Clip temporal_augment(const Clip& clip, std::uint64_t seed, const TemporalAugmentOptions& options = {});

// Overwrites each listed frame (processed in ascending order) with the frame
// before it. Index 0 is rejected.
Clip repeat_previous(const Clip& clip, std::vector<std::size_t> frames);

// Anchor is a raw clip of the real video; positive and negative are
// spatially then temporally augmented clips of the real and fake video. The
// classification list holds `batch_size` clips: anchor, the raw fake clip at
// the anchor's window, positive, negative, then fresh augmented clips
// alternating real/fake.
TripletBatch make_triplet(const Video& real, const Video& fake, const SynthConfig& cfg,
                          std::uint64_t seed, std::size_t batch_size = 4);

// Per-axis mean squared second difference of the frame-to-frame displacement
// of `region`, estimated by integer SSD search over +/- max_shift pixels with
// parabolic refinement. `horizontal` measures shifts along rows (x axis).
struct DiscontinuityStat {
  double horizontal = 0.0;
  double vertical = 0.0;
};
DiscontinuityStat temporal_discontinuity(const Tensor& frames, const Region& region,
                                         std::size_t max_shift);

}  // namespace dip::synth
