#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <random>
#include <thread>
#include <vector>

namespace flatbill {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent stream for batch b of a run seeded with `seed`.
inline std::mt19937_64 batch_rng(std::uint64_t seed, std::uint64_t b) {
    return std::mt19937_64(splitmix64(seed ^ splitmix64(b + 0x5851f42d4c957f2dULL)));
}

int default_threads();

// Runs fn(batch, rng) for batches [first, last) on `threads` workers and
// merges the per-batch accumulators in batch order, so the result does not
// depend on the thread count.
template <class Acc, class Fn>
Acc run_batches(std::uint64_t seed, std::int64_t first, std::int64_t last, int threads, Fn fn) {
    const std::int64_t n = std::max<std::int64_t>(0, last - first);
    std::vector<std::optional<Acc>> parts(static_cast<std::size_t>(n));
    std::atomic<std::int64_t> next{0};
    std::mutex mu;
    std::int64_t cursor = 0;
    Acc out;
    std::exception_ptr failure;
    auto worker = [&]() {
        for (;;) {
            const std::int64_t i = next.fetch_add(1);
            if (i >= n) break;
            std::optional<Acc> part;
            try {
                auto rng = batch_rng(seed, static_cast<std::uint64_t>(first + i));
                part = fn(first + i, rng);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!failure) failure = std::current_exception();
                next = n;
                break;
            }
            std::lock_guard<std::mutex> lock(mu);
            parts[static_cast<std::size_t>(i)] = std::move(part);
            // Merge whatever prefix is complete, always in batch order.
            while (cursor < n && parts[static_cast<std::size_t>(cursor)]) {
                out.merge(*parts[static_cast<std::size_t>(cursor)]);
                parts[static_cast<std::size_t>(cursor)].reset();
                ++cursor;
            }
        }
    };
    threads = std::max(1, std::min<int>(threads, static_cast<int>(std::max<std::int64_t>(n, 1))));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

// Exact (associative) sum of non-negative reals in 2^-64 fixed point.
class FixedSum {
public:
    void add(double w) { v_ += static_cast<__int128>(std::ldexp(w, 64) + 0.5); }
    void merge(const FixedSum& o) { v_ += o.v_; }
    double value() const { return std::ldexp(static_cast<double>(v_), -64); }
    bool operator==(const FixedSum& o) const { return v_ == o.v_; }

private:
    __int128 v_ = 0;
};

}  // namespace flatbill
