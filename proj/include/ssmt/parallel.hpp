#pragma once

#include <cstddef>
#include <functional>

namespace ssmt {

/// Worker count: SSMT_THREADS when set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
int worker_threads();

/// Runs fn(i) for i in [0, n) on up to worker_threads() threads. Each index
/// runs exactly once; callers write results into slot i so the outcome does
/// not depend on scheduling. The first exception is rethrown after all
/// workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ssmt
