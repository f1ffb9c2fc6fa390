#include "hetpeer/parallel.hpp"

#include <algorithm>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace hetpeer {

namespace {
thread_local bool in_worker = false;
}

void parallel_for(std::size_t count, int workers,
                  const std::function<void(std::size_t)>& body) {
    const std::size_t n_workers =
        std::min<std::size_t>(count, static_cast<std::size_t>(std::max(workers, 1)));
    if (n_workers <= 1 || in_worker) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }

    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    threads.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) {
        threads.emplace_back([&, w] {
            in_worker = true;
            // strided partition
            for (std::size_t i = w; i < count; i += n_workers) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
            in_worker = false;
        });
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace hetpeer
