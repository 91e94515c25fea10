#include "dip/model.hpp"

#include <cmath>

#include "dip/rng.hpp"

namespace dip::model {

void ModelConfig::validate() const {
  ste.validate();
  dica.validate();
  if (ste.embed_dim != dica.embed_dim) throw ShapeError("STE and DiCA embedding widths differ");
  if (diffusion_steps < 1) throw ShapeError("diffusion steps must be >= 1");
  if (k_n % 2 == 0 || k_n < 1 || k_n > 2 * ste.grid() - 1) {
    throw ShapeError("k_n must be odd and lie in [1, 2L-1]");
  }
}

ParamStore make_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore store;
  Rng ste_rng = make_rng(seed, {0x737465ULL});
  ste::init_params(store, cfg.ste, ste_rng);
  store.add("idm.mu", Tensor::scalar(cfg.mu_init));
  Rng dica_rng = make_rng(seed, {0x64696361ULL});
  dica::init_params(store, cfg.dica, dica_rng);
  store.add("da.tau2", Tensor::scalar(cfg.tau2_init));
  return store;
}

Forward forward(Graph& g, const ParamStore& params, const Tensor& frames, const ModelConfig& cfg) {
  Forward f;
  const ste::TokenTensor tokens = ste::tokenize(g, frames, cfg.ste, params);
  const ste::TokenTensor encoded = ste::ste_forward(g, tokens, cfg.ste, params);
  std::tie(f.z_h, f.z_v) = ste::directional_pool(encoded, cfg.ste.pooling);

  const std::size_t l = cfg.ste.grid();
  const std::size_t e = cfg.ste.embed_dim;
  f.horizontal_content = ad::slice(f.z_h.tokens, 1, 0, l, e);
  f.vertical_content = ad::slice(f.z_v.tokens, 1, 0, l, e);
  const Var nodes = ad::concat_rows({f.horizontal_content, f.vertical_content});
  f.diffusion = idm::diffusion_on_graph(g, nodes, g.param(params, "idm.mu"), idm::neighbor_mask(l, cfg.k_n),
                                        cfg.diffusion_steps);
  f.d_hh = idm::block(f.diffusion.distances, 0, 0);
  f.d_vv = idm::block(f.diffusion.distances, 1, 1);
  f.d_hv = idm::block(f.diffusion.distances, 0, 1);
  f.d_vh = idm::block(f.diffusion.distances, 1, 0);

  std::tie(f.decoded_h, f.decoded_v) =
      dica::dica_stack(g, params, f.z_h.tokens, f.z_v.tokens, f.d_hv, f.d_vh, cfg.dica);
  f.bundle = dica::mdc_heads(g, params, f.decoded_h, f.decoded_v);
  return f;
}

double fake_probability(const Forward& f) {
  const Tensor& y = f.bundle.video.value();
  const double m = std::max(y[0], y[1]);
  const double a = std::exp(y[0] - m);
  const double b = std::exp(y[1] - m);
  return b / (a + b);
}

}  // namespace dip::model
