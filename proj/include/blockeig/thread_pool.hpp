// Copyright (c) 2026 The blockeig developers.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace blockeig {

/// Persistent worker pool. A null pool (or a pool of one worker) means
/// serial execution; callers pass `ThreadPool*` down and treat nullptr as
/// "run inline". The calling thread always participates as worker 0.
class ThreadPool {
public:
    explicit ThreadPool(int workers) : nworkers_(workers < 1 ? 1 : workers) {
        for (int w = 1; w < nworkers_; ++w) {
            threads_.emplace_back([this, w] { worker_loop(w); });
        }
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    int workers() const { return nworkers_; }

    /// Run fn(worker_id) once on every worker; blocks until all are done.
    void run(const std::function<void(int)>& fn) {
        if (nworkers_ == 1) {
            fn(0);
            return;
        }
        {
            std::lock_guard<std::mutex> lk(mu_);
            task_ = &fn;
            pending_ = nworkers_ - 1;
            ++generation_;
        }
        cv_.notify_all();
        fn(0);
        std::unique_lock<std::mutex> lk(mu_);
        done_cv_.wait(lk, [this] { return pending_ == 0; });
        task_ = nullptr;
    }

private:
    void worker_loop(int id) {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(int)>* task = nullptr;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                task = task_;
            }
            (*task)(id);
            {
                std::lock_guard<std::mutex> lk(mu_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    int nworkers_;
    std::vector<std::thread> threads_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(int)>* task_ = nullptr;
    int pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

inline int pool_width(const ThreadPool* pool) {
    return pool ? pool->workers() : 1;
}

/// Split [0, n) into one contiguous chunk per worker and run
/// fn(begin, end, worker) on each. Serial when pool is null or single.
template <class Fn>
void parallel_chunks(ThreadPool* pool, std::int64_t n, Fn&& fn) {
    const int nw = pool_width(pool);
    if (nw == 1 || n < 2) {
        if (n > 0) fn(std::int64_t{0}, n, 0);
        return;
    }
    const int chunks = static_cast<int>(n < nw ? n : nw);
    pool->run([&](int w) {
        if (w >= chunks) return;
        const std::int64_t b = n * w / chunks;
        const std::int64_t e = n * (w + 1) / chunks;
        if (b < e) fn(b, e, w);
    });
}

/// Run fn(job, worker) for job in [0, njobs) with dynamic load balancing.
/// Jobs must write disjoint outputs; completion order is unspecified.
template <class Fn>
void parallel_jobs(ThreadPool* pool, std::int64_t njobs, Fn&& fn) {
    const int nw = pool_width(pool);
    if (nw == 1) {
        for (std::int64_t j = 0; j < njobs; ++j) fn(j, 0);
        return;
    }
    std::atomic<std::int64_t> next{0};
    pool->run([&](int w) {
        for (;;) {
            const std::int64_t j = next.fetch_add(1, std::memory_order_relaxed);
            if (j >= njobs) return;
            fn(j, w);
        }
    });
}

}  // namespace blockeig
