#pragma once

#include <cstddef>
#include <functional>

namespace salfau {

// Number of worker threads used by kernels. Defaults to SALFAU_THREADS or 1.
int num_threads();
void set_num_threads(int n);

// Runs fn(i) for i in [0, count). Each index is handled by exactly one worker
// and kernels never split a reduction across indices, so results do not depend
// on the worker count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace salfau
