#pragma once

#include <cstddef>
#include <functional>

namespace pnec {

// Thread count for batch work: the PNEC_THREADS environment variable when
// set, otherwise the hardware concurrency.
int default_thread_count();

// Runs fn(i) for i in [0, n) across up to `threads` workers. Work is split
// into contiguous index ranges, so any reduction done by writing to slot i
// is independent of the thread count. The first exception thrown by a worker
// is rethrown.
void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn);

}  // namespace pnec
