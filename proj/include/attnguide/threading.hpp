#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace attnguide {

// Resolves a requested worker count against the hardware and the
// ATTNGUIDE_THREADS environment cap. requested <= 0 means "auto".
inline int resolve_threads(int requested) {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    int n = requested > 0 ? requested : hw;
    if (const char* cap = std::getenv("ATTNGUIDE_THREADS")) {
        int c = std::atoi(cap);
        if (c > 0) n = std::min(n, c);
    }
    return std::max(1, n);
}

// Runs fn(i) for i in [0, n) across `threads` workers. Work is assigned by
// index (worker w takes i with i % threads == w), so the partition is a pure
// function of (n, threads) and results collected per-index stay deterministic.
inline void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn) {
    if (n == 0) return;
    threads = std::min<size_t>(std::max(1, threads), n);
    if (threads == 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w]() {
            for (size_t i = static_cast<size_t>(w); i < n; i += static_cast<size_t>(threads)) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace attnguide
