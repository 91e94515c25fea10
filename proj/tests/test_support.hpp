#pragma once

#include <cmath>
#include <random>

#include "dip/autodiff.hpp"
#include "dip/gradcheck.hpp"
#include "dip/tensor.hpp"

namespace dip::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Max relative error of reverse mode vs central differences for a loss over
// a single-parameter store named "x".
inline double op_gradcheck(const Tensor& x, const std::function<Var(Graph&, Var)>& body,
                           double eps = 1e-5) {
  ParamStore store;
  store.add("x", x);
  const auto report = finite_diff_check(
      [&](Graph& g, const ParamStore& p) { return body(g, g.param(p, "x")); }, store, {.eps = eps});
  return report.max_rel_error;
}

// Reduces any Var to a scalar with a fixed random weighting so every output
// element contributes a distinct gradient.
inline Var weighted_sum(Graph& g, Var y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  const Tensor w = random_tensor(y.value().shape(), rng);
  return ad::sum(ad::mul(y, g.constant(w)));
}

}  // namespace dip::test
