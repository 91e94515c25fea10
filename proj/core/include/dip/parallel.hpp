#pragma once

#include <cstddef>
#include <functional>

namespace dip {

// Worker count: DIP_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

// Runs body(i) for i in [0, n) over up to worker_count() threads. Every index
// runs exactly once; the first exception thrown is rethrown after joining.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace dip
