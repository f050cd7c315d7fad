#pragma once
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace spikeforest {

// Runs f(0..n_jobs-1) on a fixed pool. Jobs must be independent and write
// only to their own output slot; results are then identical for any worker
// count. The first exception thrown by a job is rethrown on the caller.
template <class F>
void parallel_for(int n_jobs, int workers, F&& f) {
    if (n_jobs <= 0) return;
    if (workers <= 1 || n_jobs == 1) {
        for (int i = 0; i < n_jobs; ++i) f(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto run = [&]() {
        while (true) {
            int i = next.fetch_add(1);
            if (i >= n_jobs) return;
            try {
                f(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    int count = std::min(workers, n_jobs);
    pool.reserve(static_cast<std::size_t>(count));
    for (int w = 0; w < count; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace spikeforest
