// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace hvnet {

namespace detail {
inline std::atomic<std::size_t>& thread_override() {
  static std::atomic<std::size_t> value{0};
  return value;
}
}  // namespace detail

/// Worker cap. An explicit set_thread_limit() wins; otherwise HVNET_THREADS,
/// otherwise the hardware concurrency.
inline std::size_t thread_limit() {
  if (const std::size_t forced = detail::thread_override().load(); forced > 0) {
    return forced;
  }
  if (const char* env = std::getenv("HVNET_THREADS"); env != nullptr) {
    try {
      const long parsed = std::stol(env);
      if (parsed > 0) return static_cast<std::size_t>(parsed);
    } catch (const std::exception&) {
      // unparsable values fall through to the hardware default
    }
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Pass 0 to restore the environment/hardware default.
inline void set_thread_limit(std::size_t threads) {
  detail::thread_override().store(threads);
}

/// Runs fn(i) for i in [0, count). Each index is handled by exactly one
/// worker, so callers writing disjoint outputs per index get results that
/// are bit-identical to the sequential loop.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn, std::size_t min_per_worker = 1) {
  const std::size_t workers =
      std::min(thread_limit(), std::max<std::size_t>(1, count / std::max<std::size_t>(1, min_per_worker)));
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) fn(i);
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

}  // namespace hvnet
