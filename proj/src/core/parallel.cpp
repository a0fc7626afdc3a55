#include "hsrgan/core/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace hsrgan {

int worker_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  int n = std::max(1, hw);
  if (const char* env = std::getenv("HSRGAN_THREADS")) {
    try {
      n = std::max(1, std::stoi(env));
    } catch (...) {
    }
  }
  return n;
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  const int workers = static_cast<int>(std::min<int64_t>(worker_count(), n));
  if (workers <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  for (int w = 0; w < workers; ++w)
    threads.emplace_back([&] {
      for (int64_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace hsrgan
