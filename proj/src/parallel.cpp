#include "ascm/parallel.hpp"

#include <atomic>
#include <cstdlib>

namespace ascm {

namespace {

int default_threads() {
  if (const char* env = std::getenv("ASCM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

std::atomic<int> g_threads{0};

}  // namespace

void set_num_threads(int n) { g_threads.store(n > 0 ? n : 0); }

int num_threads() {
  const int n = g_threads.load();
  return n > 0 ? n : default_threads();
}

}  // namespace ascm
