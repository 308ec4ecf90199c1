#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace semg::detail {

inline bool& in_parallel_region() {
    thread_local bool flag = false;
    return flag;
}

inline unsigned worker_count() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

// Runs fn(i) for i in [0, n). Work is handed out dynamically; callers must
// write results into per-index slots so the outcome is order independent.
// Nested calls run serially on the calling worker.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, unsigned max_workers = 0) {
    unsigned workers = max_workers == 0 ? worker_count() : max_workers;
    if (in_parallel_region()) workers = 1;
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            in_parallel_region() = true;
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace semg::detail
