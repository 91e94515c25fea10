#include "dip/dica.hpp"

#include <cmath>

#include "dip/layers.hpp"

namespace dip::dica {

void DicaConfig::validate() const {
  if (layers < 1) throw ShapeError("dica layers must be >= 1");
  if (heads == 0 || embed_dim % heads != 0) throw ShapeError("dica heads must divide E");
}

std::string layer_prefix(std::size_t layer, char direction) {
  return "dica.layer" + std::to_string(layer) + "." + direction;
}

void init_params(ParamStore& store, const DicaConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t e = cfg.embed_dim;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    for (char d : {'h', 'v'}) {
      layers::init_self_attention_block(store, layer_prefix(l, d), e, cfg.mlp_ratio * e, rng);
    }
  }
  store.add("dica.tau1", Tensor::scalar(cfg.tau1_init));
  layers::init_layer_norm(store, "mdc.norm_h", e);
  layers::init_layer_norm(store, "mdc.norm_v", e);
  layers::init_linear(store, "mdc.head_h", e, 2, rng);
  layers::init_linear(store, "mdc.head_v", e, 2, rng);
  layers::init_linear(store, "mdc.head_video", 2 * e, 2, rng);
}

Var diffusion_bias(Var distances, Var tau1) {
  const std::size_t l = distances.value().rows();
  if (distances.value().cols() != l) throw ShapeError("diffusion_bias: distance block must be square");
  const Var padded = ad::embed(distances, l + 1, l + 1, 1, 1);
  return ad::exp(ad::scale(ad::scale_by(padded, tau1), -1.0));
}

namespace {

Var cross_attention(Graph& g, const ParamStore& store, const std::string& query_prefix,
                    const std::string& kv_prefix, Var query_norm, Var kv_norm, std::optional<Var> bias,
                    std::size_t heads) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(query_norm.value().cols() / heads));
  ad::AttentionGroup all;
  for (std::size_t i = 0; i < query_norm.value().rows(); ++i) all.query_rows.push_back(i);
  for (std::size_t i = 0; i < kv_norm.value().rows(); ++i) all.key_rows.push_back(i);
  return ad::attention(layers::linear(g, store, query_prefix + ".q", query_norm),
                       layers::linear(g, store, kv_prefix + ".k", kv_norm),
                       layers::linear(g, store, kv_prefix + ".v", kv_norm), heads, {all}, bias, scale);
}

}  // namespace

std::pair<Var, Var> dica_layer(Graph& g, const ParamStore& store, std::size_t layer, Var z_h, Var z_v,
                               Var d_hv, Var d_vh, Var tau1, const DicaConfig& cfg) {
  const std::size_t rows = z_h.value().rows();
  if (z_v.value().shape() != z_h.value().shape()) throw ShapeError("dica_layer: Z_h and Z_v shapes differ");
  const Shape block{rows - 1, rows - 1};
  if (d_hv.value().shape() != block || d_vh.value().shape() != block) {
    throw ShapeError("dica_layer: diffusion blocks must be L x L");
  }
  const std::string ph = layer_prefix(layer, 'h');
  const std::string pv = layer_prefix(layer, 'v');
  const Var hn = layers::layer_norm(g, store, ph + ".ln1", z_h);
  const Var vn = layers::layer_norm(g, store, pv + ".ln1", z_v);

  std::optional<Var> bias_h, bias_v;
  if (cfg.use_diffusion_bias) {
    bias_h = diffusion_bias(d_vh, tau1);
    bias_v = diffusion_bias(d_hv, tau1);
  }
  const Var attn_h = cross_attention(g, store, pv, ph, vn, hn, bias_h, cfg.heads);
  const Var attn_v = cross_attention(g, store, ph, pv, hn, vn, bias_v, cfg.heads);

  auto finish = [&](const std::string& prefix, Var residual, Var attn) {
    const Var x = ad::add(residual, layers::linear(g, store, prefix + ".out", attn));
    return ad::add(x, layers::mlp(g, store, prefix + ".mlp", layers::layer_norm(g, store, prefix + ".ln2", x)));
  };
  return {finish(ph, z_h, attn_h), finish(pv, z_v, attn_v)};
}

std::pair<Var, Var> dica_stack(Graph& g, const ParamStore& store, Var z_h, Var z_v, Var d_hv, Var d_vh,
                               const DicaConfig& cfg) {
  cfg.validate();
  const Var tau1 = g.param(store, "dica.tau1");
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    std::tie(z_h, z_v) = dica_layer(g, store, l, z_h, z_v, d_hv, d_vh, tau1, cfg);
  }
  return {z_h, z_v};
}

PredictionBundle mdc_heads(Graph& g, const ParamStore& store, Var decoded_h, Var decoded_v) {
  const Var z_h = layers::layer_norm(g, store, "mdc.norm_h", decoded_h);
  const Var z_v = layers::layer_norm(g, store, "mdc.norm_v", decoded_v);
  const std::size_t rows = z_h.value().rows();
  const std::size_t e = z_h.value().cols();
  const Var cls_h = ad::slice(z_h, 0, 0, 1, e);
  const Var cls_v = ad::slice(z_v, 0, 0, 1, e);
  std::vector<std::size_t> content(rows - 1);
  for (std::size_t i = 0; i < content.size(); ++i) content[i] = i + 1;
  const Var pool_h = ad::group_reduce(z_h, {content}, ad::Reduce::kMean);
  const Var pool_v = ad::group_reduce(z_v, {content}, ad::Reduce::kMean);
  PredictionBundle out;
  out.horizontal = layers::linear(g, store, "mdc.head_h", cls_h);
  out.vertical = layers::linear(g, store, "mdc.head_v", cls_v);
  out.video = layers::linear(g, store, "mdc.head_video", ad::concat_cols({cls_h, cls_v}));
  out.pooled = ad::concat_cols({pool_h, pool_v});
  return out;
}

}  // namespace dip::dica
