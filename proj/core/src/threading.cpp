#include "depthfill/threading.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace depthfill {

namespace {

thread_local bool tl_inside_job = false;

/// Lazily started pool. Workers block on a condition variable between jobs;
/// a job is a chunk counter the workers drain cooperatively. Nested calls
/// degrade to serial execution instead of deadlocking.
class Pool {
public:
    static Pool& instance() {
        static Pool pool;
        return pool;
    }

    void set_threads(int threads) {
        std::lock_guard<std::mutex> guard(api_mutex_);
        int target = threads <= 0 ? default_threads() : threads;
        resize_locked(target);
    }

    int threads() {
        std::lock_guard<std::mutex> guard(api_mutex_);
        return configured_ > 0 ? configured_ : default_threads();
    }

    void run(std::int64_t chunk_count,
             const std::function<void(std::int64_t)>& chunk_fn) {
        if (tl_inside_job) {
            for (std::int64_t i = 0; i < chunk_count; ++i) chunk_fn(i);
            return;
        }
        std::lock_guard<std::mutex> guard(api_mutex_);
        if (configured_ == 0) resize_locked(default_threads());
        if (workers_.empty() || chunk_count <= 1) {
            for (std::int64_t i = 0; i < chunk_count; ++i) chunk_fn(i);
            return;
        }
        {
            std::lock_guard<std::mutex> lk(job_mutex_);
            job_fn_ = &chunk_fn;
            job_chunks_ = chunk_count;
            next_chunk_.store(0);
            pending_workers_ = static_cast<int>(workers_.size());
            job_error_ = nullptr;
            ++job_id_;
        }
        job_cv_.notify_all();
        drain();  // the calling thread participates
        std::unique_lock<std::mutex> lk(job_mutex_);
        done_cv_.wait(lk, [this] { return pending_workers_ == 0; });
        job_fn_ = nullptr;
        if (job_error_) std::rethrow_exception(job_error_);
    }

private:
    Pool() = default;
    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(job_mutex_);
            shutdown_ = true;
        }
        job_cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

    static int default_threads() {
        unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc);
    }

    void resize_locked(int target) {
        if (target == configured_ && !workers_.empty()) return;
        if (target == configured_ && configured_ == 1) return;
        // Stop existing workers.
        {
            std::lock_guard<std::mutex> lk(job_mutex_);
            shutdown_ = true;
        }
        job_cv_.notify_all();
        for (auto& t : workers_) t.join();
        workers_.clear();
        shutdown_ = false;
        configured_ = target;
        // The calling thread is worker 0; spawn target-1 extras.
        for (int i = 1; i < target; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    void worker_loop() {
        std::uint64_t seen_job = 0;
        for (;;) {
            const std::function<void(std::int64_t)>* fn = nullptr;
            {
                std::unique_lock<std::mutex> lk(job_mutex_);
                job_cv_.wait(lk, [&] { return shutdown_ || (job_fn_ && job_id_ != seen_job); });
                if (shutdown_) return;
                seen_job = job_id_;
                fn = job_fn_;
            }
            drain_fn(*fn);
            {
                std::lock_guard<std::mutex> lk(job_mutex_);
                if (--pending_workers_ == 0) done_cv_.notify_all();
            }
        }
    }

    void drain() {
        drain_fn(*job_fn_);
    }

    void drain_fn(const std::function<void(std::int64_t)>& fn) {
        tl_inside_job = true;
        for (;;) {
            std::int64_t i = next_chunk_.fetch_add(1);
            if (i >= job_chunks_) break;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(job_mutex_);
                if (!job_error_) job_error_ = std::current_exception();
            }
        }
        tl_inside_job = false;
    }

    std::mutex api_mutex_;
    int configured_ = 0;

    std::vector<std::thread> workers_;
    std::mutex job_mutex_;
    std::condition_variable job_cv_;
    std::condition_variable done_cv_;
    const std::function<void(std::int64_t)>* job_fn_ = nullptr;
    std::int64_t job_chunks_ = 0;
    std::atomic<std::int64_t> next_chunk_{0};
    int pending_workers_ = 0;
    std::uint64_t job_id_ = 0;
    std::exception_ptr job_error_;
    bool shutdown_ = false;
};

}  // namespace

void set_thread_count(int threads) { Pool::instance().set_threads(threads); }
int thread_count() { return Pool::instance().threads(); }

void parallel_for_chunks(std::int64_t begin, std::int64_t end, std::int64_t grain,
                         const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (end <= begin) return;
    if (grain < 1) grain = 1;
    const std::int64_t count = end - begin;
    const std::int64_t chunks = (count + grain - 1) / grain;
    Pool::instance().run(chunks, [&](std::int64_t chunk) {
        const std::int64_t lo = begin + chunk * grain;
        const std::int64_t hi = std::min(end, lo + grain);
        fn(lo, hi);
    });
}

void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& fn) {
    parallel_for_chunks(begin, end, 1, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) fn(i);
    });
}

}  // namespace depthfill
