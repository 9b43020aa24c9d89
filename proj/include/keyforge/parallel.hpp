#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace keyforge {

/// Number of workers to use when a caller passes 0.
inline unsigned default_threads() {
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, n) over at most `threads` workers with static
/// contiguous chunks. Results must be written to per-index slots so the
/// outcome is independent of the worker count. The first exception thrown by
/// any worker is rethrown on the calling thread.
template <typename Body>
void parallel_for(std::size_t n, unsigned threads, Body&& body) {
  if (threads == 0) threads = default_threads();
  const std::size_t workers = std::min<std::size_t>(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      try {
        for (std::size_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace keyforge
