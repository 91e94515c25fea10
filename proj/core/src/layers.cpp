#include "dip/layers.hpp"

#include <cmath>

namespace dip::layers {

void init_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                 Rng& rng, bool with_bias) {
  // Xavier/Glorot normal.
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(in + out)));
  Tensor w({in, out});
  for (auto& v : w.values()) v = dist(rng);
  store.add(name + ".weight", std::move(w));
  if (with_bias) store.add(name + ".bias", Tensor({out}, 0.0));
}

void init_layer_norm(ParamStore& store, const std::string& name, std::size_t width) {
  store.add(name + ".gamma", Tensor({width}, 1.0));
  store.add(name + ".beta", Tensor({width}, 0.0));
}

void init_mlp(ParamStore& store, const std::string& name, std::size_t width, std::size_t hidden,
              Rng& rng) {
  init_linear(store, name + ".fc1", width, hidden, rng);
  init_linear(store, name + ".fc2", hidden, width, rng);
}

Var linear(Graph& g, const ParamStore& store, const std::string& name, Var x) {
  const std::string bias = name + ".bias";
  std::optional<Var> b;
  if (store.contains(bias)) b = g.param(store, bias);
  return ad::linear(x, g.param(store, name + ".weight"), b);
}

Var layer_norm(Graph& g, const ParamStore& store, const std::string& name, Var x) {
  return ad::layer_norm(x, g.param(store, name + ".gamma"), g.param(store, name + ".beta"));
}

Var mlp(Graph& g, const ParamStore& store, const std::string& name, Var x) {
  return linear(g, store, name + ".fc2", ad::gelu(linear(g, store, name + ".fc1", x)));
}

void init_self_attention_block(ParamStore& store, const std::string& prefix, std::size_t width,
                               std::size_t mlp_hidden, Rng& rng) {
  init_layer_norm(store, prefix + ".ln1", width);
  init_linear(store, prefix + ".q", width, width, rng);
  // A key bias only shifts each score row by a constant, so it is omitted.
  init_linear(store, prefix + ".k", width, width, rng, false);
  init_linear(store, prefix + ".v", width, width, rng);
  init_linear(store, prefix + ".out", width, width, rng);
  init_layer_norm(store, prefix + ".ln2", width);
  init_mlp(store, prefix + ".mlp", width, mlp_hidden, rng);
}

Var self_attention_block(Graph& g, const ParamStore& store, const std::string& prefix, Var x,
                         std::size_t heads, const std::vector<ad::AttentionGroup>& groups) {
  const std::size_t width = x.value().cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(width / heads));
  const Var h = layer_norm(g, store, prefix + ".ln1", x);
  const Var attn = ad::attention(linear(g, store, prefix + ".q", h), linear(g, store, prefix + ".k", h),
                                 linear(g, store, prefix + ".v", h), heads, groups, std::nullopt, scale);
  const Var x1 = ad::add(x, linear(g, store, prefix + ".out", attn));
  return ad::add(x1, mlp(g, store, prefix + ".mlp", layer_norm(g, store, prefix + ".ln2", x1)));
}

void zero_output_projections(ParamStore& store, const std::string& prefix) {
  for (const char* n : {".out.weight", ".out.bias", ".mlp.fc2.weight", ".mlp.fc2.bias"}) {
    store.value(prefix + n).fill(0.0);
  }
}

}  // namespace dip::layers
