#include "advtrain/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace advtrain {

namespace {
std::atomic<int> g_threads{1};
}

void set_threads(int n) { g_threads.store(n < 1 ? 1 : n); }
int threads() { return g_threads.load(); }

void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  const int t = std::min<size_t>(threads(), n);
  if (t <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(t);
  for (int w = 0; w < t; ++w) {
    const size_t lo = n * w / t;
    const size_t hi = n * (w + 1) / t;
    pool.emplace_back([lo, hi, &fn] {
      for (size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace advtrain
