#ifndef CTMQ_PARALLEL_HPP
#define CTMQ_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace ctmq {

namespace detail {
inline std::atomic<std::size_t>& thread_count_storage() {
  static std::atomic<std::size_t> count{1};
  return count;
}
}  // namespace detail

/// Intra-op worker count. Results are deterministic for a fixed value.
inline std::size_t num_threads() { return detail::thread_count_storage().load(); }
inline void set_num_threads(std::size_t n) { detail::thread_count_storage().store(std::max<std::size_t>(1, n)); }

/// Splits [0, n) into num_threads() contiguous chunks; fn(begin, end, chunk_index).
/// Chunk boundaries depend only on n and the thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(num_threads(), n);
  if (workers <= 1) {
    if (n > 0) fn(std::size_t{0}, n, std::size_t{0});
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    auto run = [&](std::size_t w) {
      const std::size_t begin = n * w / workers;
      const std::size_t end = n * (w + 1) / workers;
      try {
        fn(begin, end, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    };
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run, w);
    run(0);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::size_t parallel_chunks(std::size_t n) { return std::max<std::size_t>(1, std::min(num_threads(), n)); }

}  // namespace ctmq

#endif  // CTMQ_PARALLEL_HPP
