#pragma once

#include <cstddef>
#include <functional>

namespace sgsw {

/// Worker count for data-parallel reductions. Read once from SGSW_THREADS
/// (default: hardware concurrency). 1 gives a purely sequential run.
int thread_count();
void set_thread_count(int n);

/// Splits [0, n) into contiguous chunks and runs body(begin, end) on each.
/// Every index is handled by exactly one call, so per-index results do not
/// depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace sgsw
