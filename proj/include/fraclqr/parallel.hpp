#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace fraclqr {

/// Worker count: FRAC_LQR_THREADS when set to a positive integer, else hardware concurrency.
inline int worker_count() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (const char* env = std::getenv("FRAC_LQR_THREADS")) {
        try {
            const int v = std::stoi(env);
            if (v > 0) return v;
        } catch (const std::exception&) {
        }
    }
    return hw;
}

/**
 * Runs body(k) for k in [0, count). Work is split into contiguous blocks, one per worker,
 * so results written by index do not depend on the thread count. The first exception
 * thrown by any worker is rethrown on the calling thread.
 */
template <class Body>
void parallel_for(int count, Body&& body) {
    const int workers = std::min(worker_count(), std::max(count, 1));
    if (workers <= 1 || count < 2) {
        for (int k = 0; k < count; ++k) body(k);
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        const int lo = static_cast<int>(static_cast<long long>(count) * w / workers);
        const int hi = static_cast<int>(static_cast<long long>(count) * (w + 1) / workers);
        pool.emplace_back([&, lo, hi] {
            try {
                for (int k = lo; k < hi; ++k) body(k);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

/// Neumaier compensated accumulator.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

} // namespace fraclqr
