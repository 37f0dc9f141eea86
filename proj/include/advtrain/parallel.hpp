#pragma once

#include <cstddef>
#include <functional>

namespace advtrain {

/// Process-wide worker count. 1 (the default) selects the sequential path;
/// results are bit-identical for any setting because all reductions happen
/// in a fixed order on the calling thread.
void set_threads(int n);
int threads();

/// Runs fn(i) for i in [0,n), chunked over the configured workers.
/// fn must only touch state owned by index i.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

}  // namespace advtrain
