#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dip/autodiff.hpp"
#include "dip/param_store.hpp"

namespace dip {

// Builds the scalar loss on `graph` from `params`. Must be deterministic.
using LossFn = std::function<Var(Graph& graph, const ParamStore& params)>;

struct GradCheckOptions {
  double eps = 1e-5;
  // Elements probed per parameter; 0 probes every element. One-element
  // parameters are always probed.
  std::size_t max_elements_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t elements_checked = 0;
  double loss = 0.0;
  // Largest relative error per parameter tensor, in store order.
  std::vector<std::pair<std::string, double>> per_param;
};

// Central differences (f(x+eps) - f(x-eps)) / 2eps against reverse mode for
// the probed elements; relative error |a-b| / max(1e-8, |a|+|b|).
GradCheckReport finite_diff_check(const LossFn& loss_fn, const ParamStore& params,
                                  const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric);

}  // namespace dip
