#pragma once

#include <cstddef>
#include <functional>

namespace mlmc {

/// Process-wide worker count used by parallel_for (default 1).
void set_thread_count(int threads);
int thread_count();

/// Runs body(i) for i in [0, n) across thread_count() workers. Each index
/// must write only to its own output slot; callers aggregate afterwards in
/// index order, which keeps results independent of the worker count. If any
/// body throws, the exception from the lowest failing index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace mlmc
