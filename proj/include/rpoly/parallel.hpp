#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rpoly {

// Runs body(i) for i in [0, count) on `threads` workers. Work items must write
// only to their own output slot; callers reduce afterwards in index order, which
// keeps results identical for any worker count.
template <class Body>
void parallel_for(std::size_t count, int threads, Body&& body) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::size_t workers = std::min<std::size_t>(threads, count);
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex mu;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < count; i += workers) body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace rpoly
