#pragma once

#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rydsim {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Work items must not
// share mutable state; results keyed by index stay deterministic regardless
// of worker count. The first exception thrown by any item is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
    if (n == 0) return;
    if (workers <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    std::vector<std::thread> pool;
    std::mutex mtx;
    std::size_t next = 0;
    std::exception_ptr first_error;
    auto body = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard<std::mutex> lk(mtx);
                if (next >= n || first_error) return;
                i = next++;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(mtx);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace rydsim
