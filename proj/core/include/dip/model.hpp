#pragma once

#include <cstdint>

#include "dip/autodiff.hpp"
#include "dip/dica.hpp"
#include "dip/idm.hpp"
#include "dip/param_store.hpp"
#include "dip/ste.hpp"

namespace dip::model {

struct ModelConfig {
  ste::STEConfig ste;
  dica::DicaConfig dica;
  std::size_t k_n = 7;
  // Steps of the differentiable (iterative) diffusion path used in training.
  std::size_t diffusion_steps = 5;
  double mu_init = 0.05;
  double tau2_init = 1.0;

  void validate() const;
};

// All student/teacher parameters: embed.*, ste.*, idm.mu, dica.*, mdc.*, da.tau2.
ParamStore make_params(const ModelConfig& cfg, std::uint64_t seed);

struct Forward {
  ste::DirectionalSequence z_h;  // encoder output, pooled
  ste::DirectionalSequence z_v;
  Var horizontal_content;        // L x E
  Var vertical_content;
  idm::DiffusionVars diffusion;
  Var d_hh, d_vv, d_hv, d_vh;
  Var decoded_h;                 // DiCA output
  Var decoded_v;
  dica::PredictionBundle bundle;
};

// frames: (T, M, M, 3).
Forward forward(Graph& g, const ParamStore& params, const Tensor& frames, const ModelConfig& cfg);

// softmax(y)[fake] for a finished forward pass.
double fake_probability(const Forward& f);

}  // namespace dip::model
