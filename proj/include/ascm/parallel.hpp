#pragma once

#include <cstddef>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace ascm {

/// Caps worker threads for every parallel kernel. n <= 0 restores the default.
void set_num_threads(int n);
int num_threads();

/// Runs body(i) for i in [0, n). Iterations must write disjoint outputs; each
/// output is accumulated inside a single iteration, so results do not depend
/// on the thread count.
template <class Body>
void parallel_for(std::ptrdiff_t n, Body&& body) {
#if defined(_OPENMP)
  const int threads = num_threads();
  if (threads > 1 && n > 1) {
#pragma omp parallel for schedule(static) num_threads(threads)
    for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
    return;
  }
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
}

}  // namespace ascm
