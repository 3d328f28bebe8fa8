#pragma once

#include <algorithm>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "fmpi/tensor.hpp"

namespace fmpi {

/// Number of worker threads used when a caller passes 0.
inline int default_thread_count() {
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers with static
/// interleaved assignment. The first exception thrown by any worker is
/// rethrown on the calling thread after all workers finish.
template <typename Fn>
void parallel_for(Index n, int threads, Fn&& fn) {
  if (threads <= 0) threads = default_thread_count();
  const Index workers = std::min<Index>(threads, n);
  if (workers <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (Index wkr = 0; wkr < workers; ++wkr) {
    pool.emplace_back([&, wkr] {
      try {
        for (Index i = wkr; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace fmpi
