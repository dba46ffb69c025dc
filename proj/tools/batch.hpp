#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace tdbfr::cli {

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0: hardware
/// concurrency). Tasks must not share mutable state. Returns one message per
/// task, empty when the task succeeded.
inline std::vector<std::string> run_batch(std::size_t n, int threads,
                                          const std::function<void(std::size_t)>& fn) {
  std::vector<std::string> errors(n);
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(n, 1));
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
        if (errors[i].empty()) errors[i] = "unknown error";
      } catch (...) {
        errors[i] = "unknown error";
      }
    }
  };
  if (workers <= 1) {
    work();
    return errors;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  return errors;
}

}  // namespace tdbfr::cli
