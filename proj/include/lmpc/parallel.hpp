#pragma once

#include <cstddef>
#include <functional>

namespace lmpc {

/// Worker count: LMPC_THREADS if set (>= 1), else the hardware concurrency.
std::size_t thread_count();

/// Runs fn(i) for i in [0, n). Each index is handled exactly once; callers
/// write results into per-index slots so the outcome does not depend on
/// scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace lmpc
