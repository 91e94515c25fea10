#pragma once

#include <cstddef>
#include <vector>

#include "dip/autodiff.hpp"
#include "dip/tensor.hpp"

namespace dip::idm {

// Node ordering throughout: rows 0..L-1 are horizontal tokens, rows
// L..2L-1 are vertical tokens.

/// 0/1 adjacency of the 2L-node graph.
///
/// Same-direction blocks: j is a neighbour of i when it is among the k_n
/// indices closest to i by |i - j| (ties toward the smaller index); the
/// relation is then symmetrized so W stays symmetric. Cross-direction blocks:
/// j is a neighbour of i when |i - j| <= floor(k_n / 2). Throws for even k_n
/// or k_n outside [1, 2L - 1].
Tensor neighbor_mask(std::size_t grid, std::size_t k_n);

// Indices in 0..L-1 selected for node i by the same-direction rule, before
// symmetrization.
std::vector<std::size_t> nearest_indices(std::size_t i, std::size_t grid, std::size_t k_n);

/// W(i,j) = exp(-mu ||f_i - f_j||^2) on the neighbourhood, 0 elsewhere.
/// `horizontal` and `vertical` are the L x E content tokens (no class slot).
Tensor build_score_matrix(const Tensor& horizontal, const Tensor& vertical, std::size_t k_n, double mu);

struct TransitionMatrix {
  Tensor weights;              // W
  Tensor transition;           // P = D^-1 W
  std::vector<double> degree;  // D(i,i)
};

// Throws NumericalError on a zero row sum.
TransitionMatrix transition_matrix(const Tensor& weights);

// Stationary weighting 1 / pi(k) with pi(k) = D(k,k) / sum_m D(m,m).
std::vector<double> inverse_density(const std::vector<double>& degree);

/// Reference path: P^t by repeated multiplication, then
/// Dt(i,j) = sum_k (P^t(i,k) - P^t(j,k))^2 / pi(k).
Tensor diffusion_distance_iterative(const TransitionMatrix& tm, std::size_t steps);

struct Spectrum {
  std::vector<double> eigenvalues;  // descending
  Tensor eigenvectors;              // column r is Phi_r, pi-orthonormal
};

// Eigendecomposition of D^-1/2 W D^-1/2 mapped back to right eigenvectors
// of P. Throws ShapeError for non-symmetric W, NumericalError on solver failure.
Spectrum spectral_decomposition(const TransitionMatrix& tm);

/// Fast path: Dt(i,j) = sum_r lambda_r^(2t) (Phi_r(i) - Phi_r(j))^2.
Tensor diffusion_distance_spectral(const TransitionMatrix& tm, std::size_t steps);

struct Blocks {
  Tensor hh, vv, hv, vh;
};

// Quadrants of a 2L x 2L matrix; hv holds rows h, columns v.
Blocks split_blocks(const Tensor& dt);
Tensor join_blocks(const Blocks& blocks);

/// Differentiable iterative path on the tape: node embeddings (2L x E) and
/// a one-element mu in, Dt (2L x 2L) out.
struct DiffusionVars {
  Var weights;
  Var transition;
  Var distances;
};
DiffusionVars diffusion_on_graph(Graph& g, Var nodes, Var mu, const Tensor& mask, std::size_t steps);

// Extracts quadrant (row_block, col_block) of a 2L x 2L Var; 0 = h, 1 = v.
Var block(Var dt, std::size_t row_block, std::size_t col_block);

}  // namespace dip::idm
