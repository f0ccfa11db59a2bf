#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace taskclip {

// Parallelism cap: TASKCLIP_THREADS when set, hardware concurrency otherwise.
inline int thread_cap() {
  if (const char* env = std::getenv("TASKCLIP_THREADS")) {
    try {
      int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (...) {
    }
    return 1;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs f(i) for i in [0, n) across at most thread_cap() threads in static
// blocks. f must be safe to run concurrently for distinct i.
template <class F>
void parallel_for(size_t n, F&& f) {
  int threads = thread_cap();
  if (threads <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) f(i);
    return;
  }
  size_t workers = std::min<size_t>(static_cast<size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (size_t i = w; i < n; i += workers) f(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace taskclip
