#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pes {

// Bad or inconsistent user-supplied configuration.  The CLI maps this to
// exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unrecoverable failure while running (I/O, numeric blow-up, corrupt
// checkpoint).  The CLI maps this to exit code 3.
class RuntimeFailure : public std::runtime_error {
 public:
  explicit RuntimeFailure(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_config(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

inline void check_runtime(bool ok, const std::string& msg) {
  if (!ok) throw RuntimeFailure(msg);
}

// Worker count for data-parallel sections.  PES_THREADS overrides the
// hardware default; results never depend on this value because every
// parallel reduction is applied in index order.
inline int worker_count() {
  if (const char* env = std::getenv("PES_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Compute device selector.  Only the CPU backend exists; anything else in
// PES_DEVICE is a configuration error rather than a silent fallback.
inline void check_device() {
  if (const char* env = std::getenv("PES_DEVICE")) {
    std::string dev(env);
    if (!dev.empty() && dev != "cpu")
      throw ConfigError("PES_DEVICE=" + dev + " is not supported (only \"cpu\")");
  }
}

// Runs fn(i) for i in [0, n).  Work is split into contiguous ranges so a
// caller that writes to per-index slots gets identical results for any
// worker count.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  int workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    int lo = static_cast<int>(static_cast<std::int64_t>(n) * w / workers);
    int hi = static_cast<int>(static_cast<std::int64_t>(n) * (w + 1) / workers);
    pool.emplace_back([lo, hi, &fn] {
      for (int i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

template <typename S>
inline bool is_finite(S v) {
  return std::isfinite(static_cast<double>(v));
}

}  // namespace pes
