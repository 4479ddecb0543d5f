#include "kexp/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace kexp {
namespace {

std::atomic<int> g_kernel_threads{0};

int default_threads() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace

int kernel_threads() {
  const int n = g_kernel_threads.load(std::memory_order_relaxed);
  return n > 0 ? n : default_threads();
}

void set_kernel_threads(int n) {
  g_kernel_threads.store(n, std::memory_order_relaxed);
}

void parallel_for(int64_t total, const std::function<void(int64_t, int64_t)>& fn,
                  int max_threads, int64_t min_per_thread) {
  if (total <= 0) return;
  int nt = max_threads > 0 ? max_threads : kernel_threads();
  nt = static_cast<int>(std::min<int64_t>(nt, total));
  if (min_per_thread > 1)
    nt = static_cast<int>(std::min<int64_t>(
        nt, std::max<int64_t>(1, total / min_per_thread)));
  if (nt <= 1) {
    fn(0, total);
    return;
  }
  const int64_t chunk = (total + nt - 1) / nt;
  std::vector<std::thread> pool;
  pool.reserve(nt - 1);
  for (int t = 1; t < nt; ++t) {
    const int64_t b = t * chunk;
    const int64_t e = std::min<int64_t>(total, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(0, std::min<int64_t>(total, chunk));
  for (auto& th : pool) th.join();
}

}  // namespace kexp
