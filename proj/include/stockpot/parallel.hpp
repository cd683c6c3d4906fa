#pragma once

#include <cstddef>
#include <functional>

namespace stockpot {

// Worker count for per-unit parallelism. Resolved from the STOCKPOT_THREADS
// environment variable on every call (0 or unset means hardware
// concurrency), so a process can change it between operations.
unsigned resolve_threads();

// Runs fn(i) for i in [0, count). Work is partitioned statically; fn must
// only write to its own slot, which keeps outputs bit-identical to the
// sequential order regardless of the worker count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace stockpot
