#pragma once

#include <cstdint>
#include <functional>

namespace hsrgan {

// Worker cap from HSRGAN_THREADS (default: hardware concurrency, at least 1).
int worker_count();

// Runs fn(i) for i in [0, n) across worker_count() threads. Each index is
// visited exactly once; results must not depend on which thread runs it.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace hsrgan
