#pragma once

#include <cstddef>
#include <functional>

namespace acn {

// Worker cap: ACNLAB_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n) across up to worker_count() threads. Callers
// write results into slot i so the merged output is order-independent.
// The first exception thrown by any task is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace acn
