#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace fse {

/// Worker count: FSE_THREADS if set and positive, otherwise the hardware
/// concurrency (at least 1).
inline int worker_count() {
    if (const char* env = std::getenv("FSE_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

/// Runs fn(i) for i in [0, n). Each index writes only its own output slot,
/// so results are identical for any worker count. Indices are assigned to
/// workers in contiguous stripes.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                         int threads = worker_count()) {
    if (n == 0) return;
    if (threads <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([begin, end, &fn] {
            for (std::size_t i = begin; i < end; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace fse
