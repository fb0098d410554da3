#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dufal {

inline constexpr const char* kVersion = "0.1.0";

/// Thrown on contract violations (shape mismatches, invalid configs,
/// non-finite values). The CLI maps these to exit code 2 where they
/// indicate bad user input.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValueError : std::runtime_error {
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

// Nested parallel_for calls run inline on the calling worker.
inline bool& in_parallel_region() {
    thread_local bool flag = false;
    return flag;
}

// Fixed-partition fork/join pool. Work is split into one contiguous chunk
// per worker; each chunk runs sequentially, so results are bit-identical
// to a serial run regardless of thread count.
class ThreadPool {
  public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    void set_threads(int n) {
        std::unique_lock lk(gate_);
        shutdown_workers();
        threads_ = n < 1 ? 1 : n;
        if (threads_ > 1) start_workers(threads_ - 1);
    }

    int threads() const { return threads_; }

    // body(chunk_begin, chunk_end)
    void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
        if (n == 0) return;
        std::unique_lock gate(gate_);
        const std::size_t nw = static_cast<std::size_t>(threads_);
        if (nw <= 1 || n == 1) {
            body(0, n);
            return;
        }
        const std::size_t chunks = n < nw ? n : nw;
        const std::size_t base = n / chunks, rem = n % chunks;
        {
            std::lock_guard lk(mu_);
            body_ = &body;
            chunk_edges_.resize(chunks + 1);
            chunk_edges_[0] = 0;
            for (std::size_t c = 0; c < chunks; ++c)
                chunk_edges_[c + 1] = chunk_edges_[c] + base + (c < rem ? 1 : 0);
            next_chunk_ = 1;  // chunk 0 runs on the calling thread
            pending_ = chunks - 1;
            ++epoch_;
        }
        cv_.notify_all();
        body(chunk_edges_[0], chunk_edges_[1]);
        std::unique_lock lk(mu_);
        done_cv_.wait(lk, [&] { return pending_ == 0; });
        body_ = nullptr;
    }

    ~ThreadPool() { shutdown_workers(); }

  private:
    ThreadPool() = default;

    void start_workers(int n) {
        stop_ = false;
        for (int i = 0; i < n; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }

    void shutdown_workers() {
        {
            std::lock_guard lk(mu_);
            stop_ = true;
            ++epoch_;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
        workers_.clear();
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            std::unique_lock lk(mu_);
            cv_.wait(lk, [&] { return stop_ || epoch_ != seen; });
            if (stop_) return;
            seen = epoch_;
            for (;;) {
                const std::size_t c = next_chunk_;
                if (c + 1 >= chunk_edges_.size()) break;
                ++next_chunk_;
                const std::size_t b = chunk_edges_[c], e = chunk_edges_[c + 1];
                lk.unlock();
                (*body_)(b, e);
                lk.lock();
                if (--pending_ == 0) done_cv_.notify_one();
            }
        }
    }

    std::mutex gate_;  // one parallel region at a time; nested calls run inline
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    std::vector<std::thread> workers_;
    const std::function<void(std::size_t, std::size_t)>* body_ = nullptr;
    std::vector<std::size_t> chunk_edges_;
    std::size_t next_chunk_ = 0, pending_ = 0;
    std::uint64_t epoch_ = 0;
    int threads_ = 1;
    bool stop_ = false;
};

}  // namespace detail

inline void set_num_threads(int n) { detail::ThreadPool::instance().set_threads(n); }
inline int num_threads() { return detail::ThreadPool::instance().threads(); }

/// Runs body(i) for i in [0, n). Iterations must write disjoint outputs;
/// each index is evaluated exactly as in a serial loop, so the result is
/// independent of the thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& body) {
    if (num_threads() <= 1 || n < 2 || detail::in_parallel_region()) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    detail::ThreadPool::instance().run(n, [&](std::size_t b, std::size_t e) {
        detail::in_parallel_region() = true;
        for (std::size_t i = b; i < e; ++i) body(i);
        detail::in_parallel_region() = false;
    });
}

/// FNV-1a, used for config hashes in run manifests.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

}  // namespace dufal
