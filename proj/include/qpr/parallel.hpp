#pragma once

#include <cstddef>
#include <functional>

namespace qpr {

/// Worker count: explicit request, else set_default_threads(), else QPR_THREADS,
/// else hardware concurrency.
int resolve_threads(int requested = 0);
void set_default_threads(int threads);

/// Runs fn(i) for i in [0, count) over contiguous static chunks. Results must be
/// written to per-index slots so output never depends on the thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn, int threads = 0);

}  // namespace qpr
