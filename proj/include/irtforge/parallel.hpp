#pragma once

#include <cstddef>
#include <functional>

namespace irtforge {

/// Worker threads available to a fit: $IRT_FORGE_THREADS when set to a
/// positive integer, otherwise the hardware concurrency (at least 1).
std::size_t worker_count();

/// Runs task(0) .. task(n_tasks - 1) across worker threads. Callers give each
/// task its own output slot and reduce afterwards in task order, so results
/// do not depend on the thread count. The first exception thrown is rethrown.
void parallel_for(std::size_t n_tasks, const std::function<void(std::size_t)>& task);

}  // namespace irtforge
