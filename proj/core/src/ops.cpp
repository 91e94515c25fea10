#include "dip/ops.hpp"

#include <cmath>

#include "dip/autodiff.hpp"

namespace dip {

Tensor softmax_rows(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("softmax_rows: expected rank-2 input");
  require_finite(m, "softmax_rows input");
  Graph g(false);
  return ad::softmax_rows(g.constant(m)).value();
}

Tensor biased_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const std::optional<Tensor>& bias) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw ShapeError("biased_attention: expected rank-2 inputs");
  }
  Graph g(false);
  ad::AttentionGroup all;
  for (std::size_t i = 0; i < q.rows(); ++i) all.query_rows.push_back(i);
  for (std::size_t i = 0; i < k.rows(); ++i) all.key_rows.push_back(i);
  std::optional<Var> b;
  if (bias) b = g.constant(*bias);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return ad::attention(g.constant(q), g.constant(k), g.constant(v), 1, {all}, b, scale).value();
}

}  // namespace dip
