#pragma once

#include <cstdint>
#include <functional>

namespace qf {

// Sets the worker count for parallel_for. 0 restores the default
// (hardware concurrency). Thread-safe to call between parallel regions only.
void set_worker_threads(int n);
int worker_threads();

// Runs fn(begin, end) over a partition of [0, n). Chunks never overlap and
// every output element is written by exactly one invocation, so results are
// bit-identical for any worker count. fn runs inline when n <= grain or
// only one worker is configured.
void parallel_for(std::int64_t n, std::int64_t grain,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

} // namespace qf
