#include "qforecast/threadpool.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace qf {
namespace {

class Pool {
public:
    explicit Pool(int workers) {
        for (int i = 0; i < workers; ++i)
            threads_.emplace_back([this] { worker_loop(); });
    }

    ~Pool() {
        {
            std::unique_lock lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    int workers() const { return static_cast<int>(threads_.size()); }

    // Blocks until all chunks have run. The caller participates.
    void run(std::int64_t chunks, const std::function<void(std::int64_t)>& body) {
        {
            std::unique_lock lk(mu_);
            body_ = &body;
            next_ = 0;
            pending_ = chunks;
            total_ = chunks;
            ++generation_;
        }
        cv_.notify_all();
        drain();
        std::unique_lock lk(mu_);
        done_cv_.wait(lk, [this] { return pending_ == 0; });
        body_ = nullptr;
    }

private:
    void drain() {
        for (;;) {
            std::int64_t idx = next_.fetch_add(1);
            if (idx >= total_) break;
            (*body_)(idx);
            if (pending_.fetch_sub(1) == 1) {
                std::unique_lock lk(mu_);
                done_cv_.notify_all();
            }
        }
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock lk(mu_);
                cv_.wait(lk, [this, seen] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
            }
            drain();
        }
    }

    std::vector<std::thread> threads_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(std::int64_t)>* body_ = nullptr;
    std::atomic<std::int64_t> next_{0};
    std::atomic<std::int64_t> pending_{0};
    std::int64_t total_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

int g_requested = 0;
Pool* g_pool = nullptr;
int g_pool_workers = -1;

int default_workers() {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

Pool& pool_for(int workers) {
    if (g_pool == nullptr || g_pool_workers != workers) {
        delete g_pool;
        g_pool = new Pool(workers - 1); // caller is worker 0
        g_pool_workers = workers;
    }
    return *g_pool;
}

} // namespace

void set_worker_threads(int n) { g_requested = n < 0 ? 0 : n; }

int worker_threads() { return g_requested == 0 ? default_workers() : g_requested; }

void parallel_for(std::int64_t n, std::int64_t grain,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) return;
    if (grain < 1) grain = 1;
    const int workers = worker_threads();
    if (workers <= 1 || n <= grain) {
        fn(0, n);
        return;
    }
    const std::int64_t max_chunks = (n + grain - 1) / grain;
    const std::int64_t chunks = std::min<std::int64_t>(workers, max_chunks);
    const std::int64_t step = (n + chunks - 1) / chunks;
    pool_for(workers).run(chunks, [&](std::int64_t c) {
        const std::int64_t b = c * step;
        const std::int64_t e = std::min(n, b + step);
        if (b < e) fn(b, e);
    });
}

} // namespace qf
