#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace m2s {

// Runs fn(i) for i in [0, count) across up to max_threads workers pulling
// from a shared counter; max_threads 0 means one worker per hardware
// thread. The first exception wins and is rethrown on the calling thread
// after all workers drain. Callers keep determinism by writing results
// into per-index slots.
template <typename Fn>
void parallel_for_index(std::size_t count, std::size_t max_threads, Fn&& fn) {
  if (count == 0) {
    return;
  }
  std::size_t workers = max_threads;
  if (workers == 0) {
    workers = std::thread::hardware_concurrency();
    if (workers == 0) {
      workers = 1;
    }
  }
  if (workers > count) {
    workers = count;
  }
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      fn(i);
    }
    return;
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto body = [&] {
    while (!failed.load(std::memory_order_relaxed)) {
      const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= count) {
        return;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) {
          first_error = std::current_exception();
        }
        failed.store(true, std::memory_order_relaxed);
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back(body);
  }
  for (std::thread& t : pool) {
    t.join();
  }
  if (first_error) {
    std::rethrow_exception(first_error);
  }
}

}  // namespace m2s
