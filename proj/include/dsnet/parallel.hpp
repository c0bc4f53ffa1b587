#pragma once

#include <cstdint>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

// Kernel parallelism is partitioned so that every output element is written by
// exactly one thread with a fixed inner reduction order; results are therefore
// bitwise identical for any thread count. The deterministic training flag still
// forces single-threaded execution as a belt-and-braces guarantee.

#if defined(_OPENMP)
#define DSNET_PARALLEL_FOR _Pragma("omp parallel for schedule(static)")
#define DSNET_PARALLEL_FOR_2 _Pragma("omp parallel for collapse(2) schedule(static)")
#else
#define DSNET_PARALLEL_FOR
#define DSNET_PARALLEL_FOR_2
#endif

namespace dsnet {

inline int& thread_budget_ref() {
  static int budget = 0;  // 0 = library default (hardware concurrency)
  return budget;
}

inline void set_threads(int n) {
  thread_budget_ref() = n;
#ifdef _OPENMP
  if (n > 0) {
    omp_set_num_threads(n);
  } else {
    omp_set_num_threads(static_cast<int>(std::thread::hardware_concurrency()));
  }
#endif
}

inline int threads() {
  int b = thread_budget_ref();
  if (b > 0) return b;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace dsnet
