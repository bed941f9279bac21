#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace tslab::detail {

inline int resolve_threads(int threads) {
  if (threads > 0) return threads;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : int(hc);
}

// Runs fn(chunk_index) for chunk_index in [0, chunks). Work is pulled from a
// shared counter; results must depend only on the chunk index, never on which
// thread ran it, so output is identical for any thread count.
template <typename Fn>
void run_chunked(std::size_t chunks, int threads, Fn&& fn) {
  threads = resolve_threads(threads);
  if (threads <= 1 || chunks <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) fn(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      std::size_t c = next.fetch_add(1);
      if (c >= chunks) break;
      fn(c);
    }
  };
  std::vector<std::thread> pool;
  std::size_t nthreads = std::min<std::size_t>(std::size_t(threads), chunks);
  pool.reserve(nthreads - 1);
  for (std::size_t t = 1; t < nthreads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
}

}  // namespace tslab::detail
