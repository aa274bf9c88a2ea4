#pragma once

#include <functional>

namespace t2p {

// Worker cap: T2P_THREADS when set, otherwise the hardware concurrency.
int worker_count();

// Runs fn(0..n-1) across up to worker_count() threads. Callers keep results in
// per-index slots so the outcome never depends on scheduling.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace t2p
