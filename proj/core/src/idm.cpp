#include "dip/idm.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace dip::idm {

namespace {

void require_square(const Tensor& m, const char* op) {
  if (m.rank() != 2 || m.rows() != m.cols()) throw ShapeError(std::string(op) + ": expected a square matrix");
}

}  // namespace

std::vector<std::size_t> nearest_indices(std::size_t i, std::size_t grid, std::size_t k_n) {
  std::vector<std::size_t> order(grid);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto dist = [i](std::size_t j) { return j > i ? j - i : i - j; };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dist(a) < dist(b) || (dist(a) == dist(b) && a < b);
  });
  order.resize(std::min(k_n, grid));
  std::sort(order.begin(), order.end());
  return order;
}

Tensor neighbor_mask(std::size_t grid, std::size_t k_n) {
  if (grid < 1) throw ShapeError("neighbor_mask: L must be >= 1");
  if (k_n % 2 == 0) throw ShapeError("neighbor_mask: k_n must be odd");
  if (k_n < 1 || k_n > 2 * grid - 1) throw ShapeError("neighbor_mask: k_n must lie in [1, 2L-1]");
  const std::size_t n = 2 * grid;
  Tensor mask({n, n}, 0.0);
  for (std::size_t i = 0; i < grid; ++i) {
    for (auto j : nearest_indices(i, grid, k_n)) {
      for (std::size_t off : {std::size_t{0}, grid}) {
        mask.at(off + i, off + j) = 1.0;
        mask.at(off + j, off + i) = 1.0;
      }
    }
  }
  const std::size_t half = k_n / 2;
  for (std::size_t i = 0; i < grid; ++i)
    for (std::size_t j = 0; j < grid; ++j) {
      const std::size_t d = j > i ? j - i : i - j;
      if (d <= half) {
        mask.at(i, grid + j) = 1.0;
        mask.at(grid + j, i) = 1.0;
      }
    }
  return mask;
}

Tensor build_score_matrix(const Tensor& horizontal, const Tensor& vertical, std::size_t k_n, double mu) {
  if (horizontal.rank() != 2 || horizontal.shape() != vertical.shape()) {
    throw ShapeError("build_score_matrix: horizontal and vertical tokens must both be L x E");
  }
  const std::size_t l = horizontal.rows();
  const std::size_t e = horizontal.cols();
  const Tensor mask = neighbor_mask(l, k_n);
  auto node = [&](std::size_t i, std::size_t k) {
    return i < l ? horizontal.at(i, k) : vertical.at(i - l, k);
  };
  Tensor w({2 * l, 2 * l}, 0.0);
  for (std::size_t i = 0; i < 2 * l; ++i)
    for (std::size_t j = 0; j < 2 * l; ++j) {
      if (mask.at(i, j) == 0.0) continue;
      double d2 = 0.0;
      for (std::size_t k = 0; k < e; ++k) d2 += (node(i, k) - node(j, k)) * (node(i, k) - node(j, k));
      w.at(i, j) = std::exp(-mu * d2);
    }
  require_finite(w, "build_score_matrix");
  return w;
}

TransitionMatrix transition_matrix(const Tensor& weights) {
  require_square(weights, "transition_matrix");
  const std::size_t n = weights.rows();
  TransitionMatrix tm;
  tm.weights = weights;
  tm.transition = Tensor(weights.shape(), 0.0);
  tm.degree.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (weights.at(i, j) < 0.0) throw ShapeError("transition_matrix: negative weight");
      s += weights.at(i, j);
    }
    if (!(s > 0.0)) throw NumericalError("transition_matrix: node " + std::to_string(i) + " is isolated");
    tm.degree[i] = s;
    for (std::size_t j = 0; j < n; ++j) tm.transition.at(i, j) = weights.at(i, j) / s;
  }
  return tm;
}

std::vector<double> inverse_density(const std::vector<double>& degree) {
  const double total = std::accumulate(degree.begin(), degree.end(), 0.0);
  std::vector<double> w(degree.size());
  for (std::size_t k = 0; k < degree.size(); ++k) w[k] = total / degree[k];
  return w;
}

Tensor diffusion_distance_iterative(const TransitionMatrix& tm, std::size_t steps) {
  if (steps < 1) throw ShapeError("diffusion_distance_iterative: t must be >= 1");
  const Tensor& p = tm.transition;
  const std::size_t n = p.rows();
  Tensor pt = p;
  for (std::size_t s = 1; s < steps; ++s) {
    Tensor next({n, n}, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < n; ++j) next.at(i, j) += pt.at(i, k) * p.at(k, j);
    pt = std::move(next);
  }
  const std::vector<double> w = inverse_density(tm.degree);
  Tensor dt({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += (pt.at(i, k) - pt.at(j, k)) * (pt.at(i, k) - pt.at(j, k)) * w[k];
      dt.at(i, j) = s;
      dt.at(j, i) = s;
    }
  return dt;
}

Spectrum spectral_decomposition(const TransitionMatrix& tm) {
  const Tensor& w = tm.weights;
  require_square(w, "spectral_decomposition");
  const std::size_t n = w.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (w.at(i, j) != w.at(j, i)) throw ShapeError("spectral_decomposition: W is not symmetric");

  const auto en = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd a(en, en);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          w.at(i, j) / std::sqrt(tm.degree[i] * tm.degree[j]);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a);
  if (solver.info() != Eigen::Success) throw NumericalError("spectral_decomposition: eigensolver failed");

  const double total = std::accumulate(tm.degree.begin(), tm.degree.end(), 0.0);
  const double c = std::sqrt(total);
  Spectrum sp;
  sp.eigenvectors = Tensor({n, n});
  // Eigen returns ascending order; flip to descending.
  for (std::size_t r = 0; r < n; ++r) {
    const auto src = static_cast<Eigen::Index>(n - 1 - r);
    sp.eigenvalues.push_back(solver.eigenvalues()(src));
    for (std::size_t i = 0; i < n; ++i) {
      sp.eigenvectors.at(i, r) =
          c * solver.eigenvectors()(static_cast<Eigen::Index>(i), src) / std::sqrt(tm.degree[i]);
    }
  }
  return sp;
}

Tensor diffusion_distance_spectral(const TransitionMatrix& tm, std::size_t steps) {
  if (steps < 1) throw ShapeError("diffusion_distance_spectral: t must be >= 1");
  const Spectrum sp = spectral_decomposition(tm);
  const std::size_t n = sp.eigenvalues.size();
  std::vector<double> gain(n);
  for (std::size_t r = 0; r < n; ++r) gain[r] = std::pow(sp.eigenvalues[r], 2.0 * static_cast<double>(steps));
  Tensor dt({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const double d = sp.eigenvectors.at(i, r) - sp.eigenvectors.at(j, r);
        s += gain[r] * d * d;
      }
      dt.at(i, j) = s;
      dt.at(j, i) = s;
    }
  require_finite(dt, "diffusion_distance_spectral");
  return dt;
}

Blocks split_blocks(const Tensor& dt) {
  require_square(dt, "split_blocks");
  if (dt.rows() % 2 != 0) throw ShapeError("split_blocks: dimension must be even");
  const std::size_t l = dt.rows() / 2;
  auto quad = [&](std::size_t r0, std::size_t c0) {
    Tensor out({l, l});
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = 0; j < l; ++j) out.at(i, j) = dt.at(r0 + i, c0 + j);
    return out;
  };
  return {quad(0, 0), quad(l, l), quad(0, l), quad(l, 0)};
}

Tensor join_blocks(const Blocks& b) {
  const std::size_t l = b.hh.rows();
  Tensor out({2 * l, 2 * l});
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j) {
      out.at(i, j) = b.hh.at(i, j);
      out.at(l + i, l + j) = b.vv.at(i, j);
      out.at(i, l + j) = b.hv.at(i, j);
      out.at(l + i, j) = b.vh.at(i, j);
    }
  return out;
}

DiffusionVars diffusion_on_graph(Graph& g, Var nodes, Var mu, const Tensor& mask, std::size_t steps) {
  if (steps < 1) throw ShapeError("diffusion_on_graph: t must be >= 1");
  const std::size_t n = nodes.value().rows();
  if (mask.rows() != n || mask.cols() != n) throw ShapeError("diffusion_on_graph: mask size mismatch");
  const Var sq = ad::pairwise_sqdist(nodes, std::nullopt);
  const Var kernel = ad::exp(ad::scale(ad::scale_by(sq, mu), -1.0));
  const Var w = ad::mul(kernel, g.constant(mask));
  const Var degree = ad::row_sum(w);
  const Var p = ad::div_rows(w, degree);
  Var pt = p;
  for (std::size_t s = 1; s < steps; ++s) pt = ad::matmul(pt, p);
  // 1 / pi(k) = sum(D) / D(k), as a 1 x 2L row.
  const Var inv_density = ad::scale_by(ad::transpose(ad::reciprocal(degree)), ad::sum(degree));
  return {w, p, ad::pairwise_sqdist(pt, inv_density)};
}

Var block(Var dt, std::size_t row_block, std::size_t col_block) {
  const std::size_t n = dt.value().rows();
  if (n % 2 != 0 || row_block > 1 || col_block > 1) throw ShapeError("block: bad quadrant");
  const std::size_t l = n / 2;
  return ad::slice(dt, row_block * l, col_block * l, l, l);
}

}  // namespace dip::idm
