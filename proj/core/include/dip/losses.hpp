#pragma once

#include "dip/autodiff.hpp"
#include "dip/dica.hpp"
#include "dip/synth.hpp"

namespace dip::losses {

// max(d_sti + cos(anc, neg) - cos(anc, pos), 0). Zero-norm inputs throw.
Var sti_loss(Var anchor, Var positive, Var negative, double d_sti);

Var cosine_similarity(Var a, Var b);

// L x L pairwise cosine similarities of the rows of z.
Var cosine_matrix(Var z);

// sum over d in {h, v} of || (cos(Z_d) + 1) / 2 - exp(-tau2 * D_dd) ||_F^2.
Var da_loss(Var horizontal, Var vertical, Var d_hh, Var d_vv, Var tau2);

// Softmax cross-entropy of a 1 x 2 logit pair against the label index.
Var cross_entropy(Var logits, synth::Label label);

// ce(y) + lambda_h ce(y_h) + lambda_v ce(y_v).
Var cce_loss(const dica::PredictionBundle& bundle, synth::Label label, double lambda_h, double lambda_v);

Var total_loss(Var cce, Var sti, Var da);

}  // namespace dip::losses
