#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace introspect {

// Worker cap: INTROSPECT_THREADS, 0 or unset = hardware concurrency.
inline int worker_count() {
  if (const char* env = std::getenv("INTROSPECT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Deterministic parallel map: each index writes only its own slot, so results
// are identical for any worker count.
inline void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  const int workers = std::min<size_t>(worker_count(), n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace introspect
