#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "dip/autodiff.hpp"
#include "dip/param_store.hpp"
#include "dip/rng.hpp"

namespace dip::dica {

struct DicaConfig {
  std::size_t layers = 6;
  std::size_t heads = 4;
  std::size_t embed_dim = 32;
  std::size_t mlp_ratio = 4;
  double tau1_init = 1.0;
  // When false the diffusion bias is dropped entirely (ablation).
  bool use_diffusion_bias = true;

  void validate() const;
};

struct PredictionBundle {
  Var video;       // y, 1 x 2 logits (real, fake)
  Var horizontal;  // y_h
  Var vertical;    // y_v
  Var pooled;      // F_pool, 1 x 2E, horizontal then vertical
};

// Registers dica.layer{l}.{h|v}.*, dica.tau1 and mdc.{norm,head}_* parameters.
void init_params(ParamStore& store, const DicaConfig& cfg, Rng& rng);

std::string layer_prefix(std::size_t layer, char direction);

// (L+1) x (L+1) additive bias exp(-tau1 * D) for the content block, with
// the class row and column treated as distance zero (bias 1).
Var diffusion_bias(Var distances, Var tau1);

/// One cross-attention layer. Horizontal output: queries from the vertical
/// sequence, keys/values from the horizontal sequence, biased by D_vh; the
/// vertical output mirrors it with D_hv. Both outputs are computed from the
/// same inputs. d_hv, d_vh are L x L.
std::pair<Var, Var> dica_layer(Graph& g, const ParamStore& store, std::size_t layer, Var z_h, Var z_v,
                               Var d_hv, Var d_vh, Var tau1, const DicaConfig& cfg);

std::pair<Var, Var> dica_stack(Graph& g, const ParamStore& store, Var z_h, Var z_v, Var d_hv, Var d_vh,
                               const DicaConfig& cfg);

// Final LayerNorm per direction, then y_h, y_v from the class tokens, y from both
// class tokens, and F_pool from the mean content tokens.
PredictionBundle mdc_heads(Graph& g, const ParamStore& store, Var decoded_h, Var decoded_v);

}  // namespace dip::dica
