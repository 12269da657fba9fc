#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bidshade {

// Worker cap; 0 = runtime default, 1 = the serial reference path.
inline int resolve_threads(int threads) {
#ifdef _OPENMP
    if (threads <= 0) return omp_get_max_threads();
    return threads;
#else
    (void)threads;
    return 1;
#endif
}

// Data-parallel map over [0, n). Every iteration must be independent; the
// serial path is the reference the OpenMP path is tested against.
template <typename Fn>
void parallel_for(std::int64_t n, int threads, Fn&& fn) {
    int t = resolve_threads(threads);
    if (t <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(t)
    for (std::int64_t i = 0; i < n; ++i) fn(i);
#else
    for (std::int64_t i = 0; i < n; ++i) fn(i);
#endif
}

constexpr std::int64_t kSumBlock = 4096;

// Deterministic reduction: fixed-size block partials combined in block
// order, so the result is bit-identical for any worker count.
template <typename Fn>
double blocked_sum(std::int64_t n, int threads, Fn&& fn) {
    if (n <= 0) return 0.0;
    std::int64_t blocks = (n + kSumBlock - 1) / kSumBlock;
    std::vector<double> partial(static_cast<std::size_t>(blocks), 0.0);
    parallel_for(blocks, threads, [&](std::int64_t b) {
        std::int64_t lo = b * kSumBlock;
        std::int64_t hi = std::min(n, lo + kSumBlock);
        double acc = 0.0;
        for (std::int64_t i = lo; i < hi; ++i) acc += fn(i);
        partial[static_cast<std::size_t>(b)] = acc;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

// Plain left-to-right accumulation; kept as the reference implementation
// the blocked reduction is checked and benchmarked against.
template <typename Fn>
double serial_sum(std::int64_t n, Fn&& fn) {
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) total += fn(i);
    return total;
}

}  // namespace bidshade
