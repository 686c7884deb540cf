#pragma once

#include <cstddef>
#include <functional>

namespace capsprobe {

// Worker count for per-image evaluation loops: CAPSPROBE_THREADS if set,
// otherwise hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0,n). Work items must be independent; items write
// only to their own index slot, so results are identical for any worker
// count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace capsprobe
