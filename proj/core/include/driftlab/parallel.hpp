// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace driftlab {

/// Upper bound on worker threads: DRIFTLAB_THREADS when set, else the hardware count.
std::size_t thread_cap() noexcept;

/// 0 means "as many as allowed".
std::size_t resolve_threads(std::size_t requested) noexcept;

/// Runs f(i) for i in [0, n) over contiguous static chunks. Work assignment
/// never affects results as long as f(i) only writes slot i.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
    threads = resolve_threads(threads);
    if (threads > n) threads = n;
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                const std::size_t end = (w + 1) * chunk < n ? (w + 1) * chunk : n;
                for (std::size_t i = w * chunk; i < end; ++i) f(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace driftlab
