#pragma once

#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace grpolab {

// Caller violated an operation's precondition.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// A computation produced a non-finite value; message carries step diagnostics.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration (file, flags, or dataset spec).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Worker count: GRPOLAB_THREADS env var overrides hardware concurrency.
inline int worker_count() {
  if (const char* env = std::getenv("GRPOLAB_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [0, n). Each index must write only its own slots;
// results are then identical to serial execution regardless of thread count.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  int workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : threads) t.join();
}

}  // namespace grpolab
