#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace aloe {

// Deterministic work partition: the work is cut into fixed-size blocks that
// do not depend on the thread count, threads claim whole blocks, and every
// block writes only to its own slice of the output. Numerical results are
// therefore identical for any --threads value.
inline constexpr int kBatchBlock = 64;

// Runs fn(begin, end) over [0, n) in blocks of kBatchBlock.
void parallel_blocks(int64_t n, int threads,
                     const std::function<void(int64_t, int64_t)>& fn);

inline void parallel_blocks(int64_t n, int threads,
                            const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  const int64_t nblocks = (n + kBatchBlock - 1) / kBatchBlock;
  threads = std::max(1, std::min<int64_t>(threads, nblocks));
  if (threads == 1) {
    for (int64_t b = 0; b < nblocks; ++b)
      fn(b * kBatchBlock, std::min<int64_t>(n, (b + 1) * kBatchBlock));
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      try {
        for (int64_t b = t; b < nblocks; b += threads)
          fn(b * kBatchBlock, std::min<int64_t>(n, (b + 1) * kBatchBlock));
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace aloe
