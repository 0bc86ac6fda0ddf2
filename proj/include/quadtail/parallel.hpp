#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace quadtail {

/// Fixed block schedule for Monte Carlo work. The split of `total` samples into
/// blocks depends only on `block_size`, never on the worker count, so results
/// reduced in block order are identical for any number of workers.
struct BlockSchedule {
  std::uint64_t total = 0;
  std::uint64_t block_size = 1u << 14;

  std::uint64_t num_blocks() const { return total == 0 ? 0 : (total + block_size - 1) / block_size; }
  std::uint64_t begin(std::uint64_t b) const { return b * block_size; }
  std::uint64_t size(std::uint64_t b) const {
    return std::min(block_size, total - b * block_size);
  }
};

/// Runs `fn(block_index)` for every block on up to `workers` threads and
/// returns the per-block results in block order.
template <typename Result>
std::vector<Result> run_blocks(const BlockSchedule& schedule, int workers,
                               const std::function<Result(std::uint64_t)>& fn) {
  const std::uint64_t nb = schedule.num_blocks();
  std::vector<Result> results(nb);
  const int threads = static_cast<int>(std::min<std::uint64_t>(std::max(workers, 1), nb));
  if (threads <= 1) {
    for (std::uint64_t b = 0; b < nb; ++b) results[b] = fn(b);
    return results;
  }
  std::atomic<std::uint64_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::uint64_t b = next++; b < nb; b = next++) {
        try {
          results[b] = fn(b);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

/// Running first/second moment accumulator for block reductions.
struct MomentAccumulator {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::uint64_t count = 0;

  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++count;
  }
  void merge(const MomentAccumulator& o) {
    sum += o.sum;
    sum_sq += o.sum_sq;
    count += o.count;
  }
  double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
  /// Standard error of the mean (unbiased variance).
  double std_err() const;
};

}  // namespace quadtail
