#include "dip/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>

#include "dip/parallel.hpp"
#include "dip/rng.hpp"

namespace dip {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace {

double evaluate(const LossFn& loss_fn, const ParamStore& params) {
  Graph g(false);
  const Var loss = loss_fn(g, params);
  if (loss.value().size() != 1) throw ShapeError("gradcheck: loss must be a one-element tensor");
  return loss.value()[0];
}

struct Probe {
  std::size_t param;
  std::size_t element;
};

}  // namespace

GradCheckReport finite_diff_check(const LossFn& loss_fn, const ParamStore& params,
                                  const GradCheckOptions& options) {
  if (!(options.eps >= 1e-7 && options.eps <= 1e-3)) {
    throw ShapeError("gradcheck: eps must lie in [1e-7, 1e-3]");
  }

  ParamStore analytic = params;
  analytic.zero_grad();
  GradCheckReport report;
  {
    Graph g(true);
    const Var loss = loss_fn(g, analytic);
    g.backward(loss);
    g.accumulate_param_grads(analytic);
    report.loss = loss.value()[0];
  }
  const double again = evaluate(loss_fn, params);
  if (again != report.loss) {
    throw NumericalError("gradcheck: loss function is not deterministic");
  }

  std::vector<Probe> probes;
  Rng rng = make_rng(options.seed, {0x67726164ULL});
  for (std::size_t p = 0; p < params.size(); ++p) {
    const std::size_t n = params[p].value.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_elements_per_param != 0 && n > options.max_elements_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_elements_per_param);
      std::sort(idx.begin(), idx.end());
    }
    for (auto i : idx) probes.push_back({p, i});
  }

  std::vector<double> numeric(probes.size());
  const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(1, probes.size()));
  // Each worker perturbs its own copy of the parameters.
  std::vector<ParamStore> scratch(workers, params);
  parallel_for(workers, [&](std::size_t w) {
    ParamStore& local = scratch[w];
    for (std::size_t k = w; k < probes.size(); k += workers) {
      const auto [p, i] = probes[k];
      double& x = local[p].value[i];
      const double x0 = x;
      x = x0 + options.eps;
      const double fp = evaluate(loss_fn, local);
      x = x0 - options.eps;
      const double fm = evaluate(loss_fn, local);
      x = x0;
      numeric[k] = (fp - fm) / (2.0 * options.eps);
    }
  });

  report.per_param.resize(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) report.per_param[p] = {params[p].name, 0.0};
  for (std::size_t k = 0; k < probes.size(); ++k) {
    const auto [p, i] = probes[k];
    const double a = analytic[p].grad[i];
    const double err = relative_error(a, numeric[k]);
    report.per_param[p].second = std::max(report.per_param[p].second, err);
    if (k == 0 || err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_param = params[p].name;
      report.worst_index = i;
      report.worst_analytic = a;
      report.worst_numeric = numeric[k];
    }
  }
  report.elements_checked = probes.size();
  return report;
}

}  // namespace dip
