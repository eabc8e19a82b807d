#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace bodyadapt {

// Shared worker pool for data-parallel loops. Work is split into fixed
// contiguous index ranges, so every output element is produced by exactly
// one thread with a fixed inner iteration order; results do not depend on
// the thread count or on scheduling order.
//
// Only one dispatch is active at a time. Calls that arrive while the pool
// is busy (nested loops, concurrent training runs) execute sequentially on
// the calling thread, which yields the same results.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    int size() const { return static_cast<int>(workers_.size()) + 1; }

    void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
        if (n == 0) return;
        if (workers_.empty() || n < 2 || busy_.exchange(true, std::memory_order_acquire)) {
            body(0, n);
            return;
        }
        std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(size()) * 2, n);
        {
            std::unique_lock<std::mutex> lk(mu_);
            task_ = &body;
            chunk_count_ = chunks;
            chunk_size_ = (n + chunks - 1) / chunks;
            total_ = n;
            next_chunk_.store(0, std::memory_order_relaxed);
            pending_ = static_cast<int>(workers_.size());
            error_ = nullptr;
            ++generation_;
        }
        cv_start_.notify_all();
        try {
            run_chunks();
        } catch (...) {
            record_error(std::current_exception());
        }
        std::exception_ptr err;
        {
            std::unique_lock<std::mutex> lk(mu_);
            cv_done_.wait(lk, [this] { return pending_ == 0; });
            task_ = nullptr;
            err = error_;
        }
        busy_.store(false, std::memory_order_release);
        if (err) std::rethrow_exception(err);
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

private:
    ThreadPool() {
        int n = default_thread_count();
        for (int i = 1; i < n; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    ~ThreadPool() {
        {
            std::unique_lock<std::mutex> lk(mu_);
            stop_ = true;
            ++generation_;
        }
        cv_start_.notify_all();
        for (auto& t : workers_) t.join();
    }

    static int default_thread_count() {
        if (const char* env = std::getenv("BODYADAPT_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }

    void run_chunks() {
        for (;;) {
            std::size_t c = next_chunk_.fetch_add(1, std::memory_order_relaxed);
            if (c >= chunk_count_) break;
            std::size_t begin = c * chunk_size_;
            std::size_t end = std::min(begin + chunk_size_, total_);
            if (begin < end) (*task_)(begin, end);
        }
    }

    void record_error(std::exception_ptr e) {
        std::unique_lock<std::mutex> lk(mu_);
        if (!error_) error_ = e;
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_start_.wait(lk, [&] { return stop_ || generation_ != seen; });
                seen = generation_;
                if (stop_) return;
            }
            try {
                run_chunks();
            } catch (...) {
                record_error(std::current_exception());
            }
            {
                std::unique_lock<std::mutex> lk(mu_);
                if (--pending_ == 0) cv_done_.notify_all();
            }
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_start_, cv_done_;
    const std::function<void(std::size_t, std::size_t)>* task_ = nullptr;
    std::size_t chunk_count_ = 0, chunk_size_ = 0, total_ = 0;
    std::atomic<std::size_t> next_chunk_{0};
    int pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
    std::exception_ptr error_;
    std::atomic<bool> busy_{false};
};

inline void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    ThreadPool::instance().parallel_for(n, body);
}

}  // namespace bodyadapt
