#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace idmm {

// Process-wide worker pool for data-parallel loops.
//
// parallel_for splits [begin, end) into one contiguous chunk per worker.
// Each index is handled by exactly one worker and every per-index
// computation is self-contained, so results are bit-identical for any
// thread count (including 1). Loops whose iterations write to shared
// accumulators must not go through here.
class ThreadPool {
public:
    static ThreadPool& instance();

    // Resize the pool. n == 1 runs everything inline on the caller.
    void set_num_threads(int n);
    int num_threads() const;

    void parallel_for(std::int64_t begin, std::int64_t end,
                      const std::function<void(std::int64_t, std::int64_t)>& body);

private:
    ThreadPool();
    ~ThreadPool();
    struct Impl;
    Impl* impl_;
};

// Convenience wrapper around the singleton.
inline void parallel_for(std::int64_t begin, std::int64_t end,
                         const std::function<void(std::int64_t, std::int64_t)>& body) {
    ThreadPool::instance().parallel_for(begin, end, body);
}

} // namespace idmm
