#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace csdf {

// Worker count: COMPACT_SDF_THREADS if set and positive, otherwise the
// hardware concurrency (at least 1).
std::size_t worker_count();

// Splits [0, n) into contiguous chunks, one per worker, and calls
// body(begin, end) for each. Chunk boundaries depend only on n and the
// worker count, so results written by index are scheduling-independent.
template <class Body>
void parallel_for(std::size_t n, Body&& body, std::size_t min_chunk = 256) {
  if (n == 0) return;
  const std::size_t workers =
      std::min(worker_count(), (n + min_chunk - 1) / min_chunk);
  if (workers <= 1) {
    body(std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(workers);
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&, w, begin, end] {
      try {
        body(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace csdf
