#pragma once

#include <string>
#include <vector>

#include "dip/autodiff.hpp"
#include "dip/param_store.hpp"
#include "dip/rng.hpp"

namespace dip::layers {

// Parameter layout used by every transformer-style block:
//   {name}.weight (in x out), {name}.bias (out)        linear
//   {name}.gamma, {name}.beta (width)                  layer norm
void init_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                 Rng& rng, bool with_bias = true);
void init_layer_norm(ParamStore& store, const std::string& name, std::size_t width);
// Two-layer GELU MLP: {name}.fc1 (width -> hidden), {name}.fc2 (hidden -> width).
void init_mlp(ParamStore& store, const std::string& name, std::size_t width, std::size_t hidden,
              Rng& rng);

Var linear(Graph& g, const ParamStore& store, const std::string& name, Var x);
Var layer_norm(Graph& g, const ParamStore& store, const std::string& name, Var x);
Var mlp(Graph& g, const ParamStore& store, const std::string& name, Var x);

// Pre-norm self-attention sublayer with residual:
//   x + out(attention(q(ln1 x), k(ln1 x), v(ln1 x)))
// followed by the pre-norm MLP sublayer x + mlp(ln2 x).
void init_self_attention_block(ParamStore& store, const std::string& prefix, std::size_t width,
                               std::size_t mlp_hidden, Rng& rng);
Var self_attention_block(Graph& g, const ParamStore& store, const std::string& prefix, Var x,
                         std::size_t heads, const std::vector<ad::AttentionGroup>& groups);

// Zeroes {prefix}.out and {prefix}.mlp.fc2 so the block reduces to its residual path.
void zero_output_projections(ParamStore& store, const std::string& prefix);

}  // namespace dip::layers
