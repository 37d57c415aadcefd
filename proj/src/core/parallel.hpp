// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

// Index-parallel loops with a process-wide worker cap. Each index writes
// its own output slot, so results never depend on scheduling.

#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace podar {

inline std::atomic<std::size_t>& thread_cap() {
    static std::atomic<std::size_t> cap{1};
    return cap;
}

/// 0 selects the hardware concurrency.
inline void set_num_threads(std::size_t n) {
    if (n == 0) n = std::max<unsigned>(1, std::thread::hardware_concurrency());
    thread_cap() = n;
}

inline std::size_t num_threads() { return thread_cap().load(); }

inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(num_threads(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex mu;
    auto run = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!err) err = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace podar
