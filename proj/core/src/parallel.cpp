// SPDX-License-Identifier: Apache-2.0
#include "driftlab/parallel.hpp"

#include <cstdlib>
#include <string>

namespace driftlab {

std::size_t thread_cap() noexcept {
    if (const char* env = std::getenv("DRIFTLAB_THREADS"); env && *env) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (...) {
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

std::size_t resolve_threads(std::size_t requested) noexcept {
    const std::size_t cap = thread_cap();
    return requested == 0 || requested > cap ? cap : requested;
}

}  // namespace driftlab
