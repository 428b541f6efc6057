#pragma once

#include <cstddef>
#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cohort {

// Runs fn(i) for i in [0, n). With parallel=true and OpenMP compiled in, the
// loop runs under a dynamic-schedule parallel for; otherwise it is a plain
// serial loop, kept as the reference path. Work items must write only to
// their own pre-sized output slots — there are no cross-item floating-point
// reductions anywhere in the codebase, so results are byte-identical
// regardless of schedule, which the test suite asserts.
template <class Fn>
void parallel_for(std::size_t n, bool parallel, Fn&& fn) {
#ifdef _OPENMP
    if (parallel && n > 1) {
        std::exception_ptr err = nullptr;
#pragma omp parallel for schedule(dynamic)
        for (long i = 0; i < static_cast<long>(n); ++i) {
            try {
                fn(static_cast<std::size_t>(i));
            } catch (...) {
#pragma omp critical(cohort_parallel_for_err)
                if (!err) err = std::current_exception();
            }
        }
        if (err) std::rethrow_exception(err);
        return;
    }
#endif
    (void)parallel;
    for (std::size_t i = 0; i < n; ++i) fn(i);
}

inline int hardware_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

} // namespace cohort
