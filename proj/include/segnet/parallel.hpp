#pragma once

#include <cstdlib>
#include <string>

#include <Eigen/Core>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace segnet {

/// Worker cap from SEGNET_THREADS, or 0 when unset or invalid.
inline int thread_cap_from_env() {
    const char* raw = std::getenv("SEGNET_THREADS");
    if (!raw || !*raw) return 0;
    char* end = nullptr;
    const long n = std::strtol(raw, &end, 10);
    if (*end != '\0' || n <= 0) return 0;
    return static_cast<int>(n);
}

/// Applies the SEGNET_THREADS cap to OpenMP and Eigen. Returns the thread
/// count in effect.
inline int configure_threads() {
    const int cap = thread_cap_from_env();
#if defined(_OPENMP)
    if (cap > 0) omp_set_num_threads(cap);
    const int n = omp_get_max_threads();
#else
    const int n = 1;
#endif
    Eigen::setNbThreads(cap > 0 ? cap : n);
    return Eigen::nbThreads();
}

}  // namespace segnet
