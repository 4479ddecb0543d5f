#pragma once

#include <cstdint>
#include <functional>

namespace kexp {

// Number of threads numeric kernels may use. Defaults to the hardware
// concurrency; 1 disables threading entirely.
int kernel_threads();
void set_kernel_threads(int n);

// Runs fn(begin, end) over disjoint chunks of [0, total), possibly on
// several threads. Each index lands in exactly one chunk and every chunk is
// processed by the same code path, so results are bit-identical for any
// thread count as long as fn writes only to its own index range.
// min_per_thread guards against spawning threads for trivially small ranges.
void parallel_for(int64_t total, const std::function<void(int64_t, int64_t)>& fn,
                  int max_threads = 0, int64_t min_per_thread = 256);

}  // namespace kexp
