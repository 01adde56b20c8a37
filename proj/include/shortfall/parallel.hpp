#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace shortfall {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Static block partition of [begin, end) across `threads` workers.  Each
/// worker writes disjoint outputs, so results are identical at any thread
/// count.
inline void parallel_for(long long begin, long long end, int threads,
                         const std::function<void(long long, long long)>& body) {
    const long long total = end - begin;
    if (total <= 0) return;
    const int workers = std::min<long long>(resolve_threads(threads), total);
    if (workers <= 1) {
        body(begin, end);
        return;
    }
    const long long chunk = (total + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    for (int t = 1; t < workers; ++t) {
        const long long lo = begin + chunk * t;
        const long long hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back(body, lo, hi);
    }
    body(begin, std::min(end, begin + chunk));
    for (auto& th : pool) th.join();
}

}  // namespace shortfall
