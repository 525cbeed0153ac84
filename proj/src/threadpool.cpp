#include "idmm/threadpool.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace idmm {

struct ThreadPool::Impl {
    std::vector<std::thread> workers;
    std::mutex mu;
    std::condition_variable cv_work;
    std::condition_variable cv_done;
    // Job state: workers grab a fixed chunk by worker index.
    const std::function<void(std::int64_t, std::int64_t)>* body = nullptr;
    std::int64_t job_begin = 0, job_end = 0;
    std::int64_t chunk = 0;
    std::uint64_t generation = 0;
    int pending = 0;
    bool stopping = false;

    void worker_loop(int worker_idx) {
        std::uint64_t seen = 0;
        for (;;) {
            std::unique_lock lk(mu);
            cv_work.wait(lk, [&] { return stopping || generation != seen; });
            if (stopping) return;
            seen = generation;
            auto* fn = body;
            std::int64_t lo = job_begin + chunk * worker_idx;
            std::int64_t hi = std::min(job_end, lo + chunk);
            lk.unlock();
            if (lo < hi) (*fn)(lo, hi);
            lk.lock();
            if (--pending == 0) cv_done.notify_one();
        }
    }

    void stop() {
        {
            std::lock_guard lk(mu);
            stopping = true;
        }
        cv_work.notify_all();
        for (auto& t : workers) t.join();
        workers.clear();
        stopping = false;
    }
};

ThreadPool::ThreadPool() : impl_(new Impl) {}

ThreadPool::~ThreadPool() {
    impl_->stop();
    delete impl_;
}

ThreadPool& ThreadPool::instance() {
    static ThreadPool pool;
    return pool;
}

void ThreadPool::set_num_threads(int n) {
    n = std::max(1, n);
    impl_->stop();
    // Worker 0 is the calling thread; spawn n-1 helpers.
    for (int i = 1; i < n; ++i)
        impl_->workers.emplace_back([this, i] { impl_->worker_loop(i); });
}

int ThreadPool::num_threads() const {
    return static_cast<int>(impl_->workers.size()) + 1;
}

void ThreadPool::parallel_for(std::int64_t begin, std::int64_t end,
                              const std::function<void(std::int64_t, std::int64_t)>& body) {
    if (end <= begin) return;
    const int n_threads = num_threads();
    const std::int64_t range = end - begin;
    if (n_threads == 1 || range < 2) {
        body(begin, end);
        return;
    }
    const std::int64_t chunk = (range + n_threads - 1) / n_threads;
    {
        std::lock_guard lk(impl_->mu);
        impl_->body = &body;
        impl_->job_begin = begin;
        impl_->job_end = end;
        impl_->chunk = chunk;
        impl_->pending = n_threads - 1;
        ++impl_->generation;
    }
    impl_->cv_work.notify_all();
    // Caller takes chunk 0.
    body(begin, std::min(end, begin + chunk));
    std::unique_lock lk(impl_->mu);
    impl_->cv_done.wait(lk, [&] { return impl_->pending == 0; });
}

} // namespace idmm
