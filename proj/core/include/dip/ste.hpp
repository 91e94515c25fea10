#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "dip/autodiff.hpp"
#include "dip/param_store.hpp"
#include "dip/rng.hpp"

namespace dip::ste {

enum class Pooling { kMean, kMax };
enum class Direction { kHorizontal, kVertical };

Pooling parse_pooling(const std::string& s);
std::string to_string(Pooling p);

struct STEConfig {
  std::size_t units = 3;
  std::size_t spatial_layers_per_unit = 3;
  std::size_t temporal_layers_per_unit = 1;
  std::size_t heads = 4;
  std::size_t embed_dim = 32;  // E
  std::size_t frames = 4;      // T
  std::size_t frame_size = 32; // M
  std::size_t patch_size = 8;  // P
  std::size_t mlp_ratio = 4;
  Pooling pooling = Pooling::kMean;

  std::size_t grid() const { return frame_size / patch_size; }  // L
  std::size_t tokens_per_frame() const { return grid() * grid() + 1; }
  void validate() const;
};

/// Embedded clip: rows are laid out frame-major, row t*(L*L+1) + s, where
/// slot s == 0 is the frame's classification token and slots 1..L*L are the
/// patch tokens in row-major (i, j) order.
struct TokenTensor {
  Var tokens;  // (T * (L*L + 1)) x E
  std::size_t frames = 0;
  std::size_t grid = 0;

  std::size_t tokens_per_frame() const { return grid * grid + 1; }
  std::size_t row(std::size_t t, std::size_t slot) const { return t * tokens_per_frame() + slot; }
};

/// Pooled sequence: (L + 1) x E, slot 0 is the pooled classification token.
struct DirectionalSequence {
  Var tokens;
  Direction direction = Direction::kHorizontal;
};

// Registers embed.* and ste.* parameters.
void init_params(ParamStore& store, const STEConfig& cfg, Rng& rng);

std::string spatial_prefix(std::size_t unit, std::size_t layer);
std::string temporal_prefix(const STEConfig& cfg, std::size_t unit, std::size_t layer);

// frames: (T, M, M, 3). Pixels are mapped from [0, 1] to [-1, 1]; patch vectors
// are flattened in (row, col, channel) order.
TokenTensor tokenize(Graph& g, const Tensor& frames, const STEConfig& cfg, const ParamStore& store);

TokenTensor ste_forward(Graph& g, const TokenTensor& x, const STEConfig& cfg, const ParamStore& store);

// Z_h slot 1+i pools row i over columns then frames; Z_v slot 1+j pools
// column j over rows then frames; slot 0 pools the class tokens over frames.
std::pair<DirectionalSequence, DirectionalSequence> directional_pool(const TokenTensor& z,
                                                                     Pooling pooling);

}  // namespace dip::ste
