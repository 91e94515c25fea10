#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dip {

using Rng = std::mt19937_64;

// Mixes a base seed with stream tags (splitmix64 finalizer per tag) so that
// every stochastic call site gets an independent, reproducible stream.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  return Rng(derive_seed(base, tags));
}

}  // namespace dip
