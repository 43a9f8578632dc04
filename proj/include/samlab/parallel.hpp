#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace samlab {

// Runs fn(i) once for every i in [0, n) using up to `threads` workers, each
// owning a contiguous block of indices. Callers must write results to
// disjoint slots; under that contract the output is bit-identical for any
// thread count. threads < 1 is treated as 1.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    int workers = std::min(std::max(threads, 1), n);
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    int chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        int begin = w * chunk;
        int end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([begin, end, &fn] {
            for (int i = begin; i < end; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace samlab
