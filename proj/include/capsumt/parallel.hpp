#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace capsumt {

// Worker cap: CAPSUMT_THREADS when set, hardware concurrency otherwise.
inline std::size_t worker_count(std::size_t jobs) {
    std::size_t hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (const char* env = std::getenv("CAPSUMT_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) hw = static_cast<std::size_t>(v);
    }
    return std::max<std::size_t>(1, std::min(hw, jobs));
}

// Index-sharded parallel loop with order-stable results: fn(i) writes into
// slot i of whatever it fills, so assembly order never depends on scheduling.
template <class F>
void parallel_for(std::size_t n, F&& fn) {
    std::size_t workers = worker_count(n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    for (auto& t : pool) t.join();
}

}  // namespace capsumt
