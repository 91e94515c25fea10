#pragma once

#include <optional>

#include "dip/tensor.hpp"

namespace dip {

// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& m);

// Single-head softmax(Q K^T / sqrt(E) + bias) V.
Tensor biased_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const std::optional<Tensor>& bias = std::nullopt);

}  // namespace dip
