#include "dip/losses.hpp"

namespace dip::losses {

Var cosine_similarity(Var a, Var b) {
  const std::size_t n = a.value().size();
  if (b.value().size() != n) throw ShapeError("cosine_similarity: length mismatch");
  const Shape row{1, n};
  auto as_row = [&](Var v) { return v.value().shape() == row ? v : ad::reshape(v, row); };
  return ad::sum(ad::mul(ad::row_normalize(as_row(a)), ad::row_normalize(as_row(b))));
}

Var sti_loss(Var anchor, Var positive, Var negative, double d_sti) {
  const Var margin = ad::sub(cosine_similarity(anchor, negative), cosine_similarity(anchor, positive));
  return ad::relu(ad::add_scalar(margin, d_sti));
}

Var cosine_matrix(Var z) {
  const Var unit = ad::row_normalize(z);
  return ad::matmul(unit, ad::transpose(unit));
}

Var da_loss(Var horizontal, Var vertical, Var d_hh, Var d_vv, Var tau2) {
  if (horizontal.value().rows() < 2) throw ShapeError("da_loss: need at least two tokens per direction");
  auto term = [&](Var z, Var d) {
    const Var similarity = ad::add_scalar(ad::scale(cosine_matrix(z), 0.5), 0.5);
    const Var target = ad::exp(ad::scale(ad::scale_by(d, tau2), -1.0));
    const Var diff = ad::sub(similarity, target);
    return ad::sum(ad::mul(diff, diff));
  };
  return ad::add(term(horizontal, d_hh), term(vertical, d_vv));
}

Var cross_entropy(Var logits, synth::Label label) {
  if (logits.value().size() != 2) throw ShapeError("cross_entropy: expected a logit pair");
  const Var logp = ad::log_softmax_rows(logits);
  return ad::scale(ad::sum(ad::slice(logp, 0, static_cast<std::size_t>(label), 1, 1)), -1.0);
}

Var cce_loss(const dica::PredictionBundle& bundle, synth::Label label, double lambda_h, double lambda_v) {
  Var loss = cross_entropy(bundle.video, label);
  loss = ad::add(loss, ad::scale(cross_entropy(bundle.horizontal, label), lambda_h));
  return ad::add(loss, ad::scale(cross_entropy(bundle.vertical, label), lambda_v));
}

Var total_loss(Var cce, Var sti, Var da) {
  auto flat = [](Var v) { return v.value().rank() == 1 ? v : ad::sum(v); };
  return ad::add(ad::add(flat(cce), flat(sti)), flat(da));
}

}  // namespace dip::losses
