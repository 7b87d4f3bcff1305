#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace nlh {

/// Evaluates fn(0..count-1) on a pool of worker threads. Results are stored by index,
/// so the output does not depend on scheduling. The exception of the lowest failing
/// index is rethrown.
template <class R, class F>
std::vector<R> run_indexed(std::size_t count, int workers, F&& fn) {
  std::vector<R> out(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        out[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t nw = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(workers, 1)));
  if (nw <= 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nw);
    for (std::size_t w = 0; w < nw; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline int default_workers() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace nlh
