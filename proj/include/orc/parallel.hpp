#pragma once

#include <algorithm>
#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace orc {

/// Runs body(k) for every k in [0, n), splitting the indices over up to
/// `threads` workers (0 means hardware concurrency). Bodies must write
/// disjoint outputs and must not throw; under those rules every index is
/// claimed exactly once and the aggregate result does not depend on the
/// schedule. A single worker degenerates to a plain loop.
inline void parallel_for(int n, int threads,
                         const std::function<void(int)>& body) {
  if (n <= 0) {
    return;
  }
  int workers =
      threads > 0 ? threads : int(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int k = 0; k < n; ++k) {
      body(k);
    }
    return;
  }
  std::atomic<int> next{0};
  const auto run = [&]() {
    for (int k = next.fetch_add(1); k < n; k = next.fetch_add(1)) {
      body(k);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(size_t(workers) - 1);
  for (int w = 1; w < workers; ++w) {
    pool.emplace_back(run);
  }
  run();
  for (std::thread& worker : pool) {
    worker.join();
  }
}

}  // namespace orc
