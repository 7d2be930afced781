#pragma once

#include "vortexlab/core.hpp"

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace vortexlab {

struct TreeParams;

namespace detail {

// Structure-of-arrays view of every particle, cloud-major.
struct FlatSources {
    struct Range {
        std::size_t begin, end;
        double delta2;
    };
    std::vector<double> x, y, g;
    std::vector<Range> ranges;

    double delta2_of(std::size_t q) const {
        for (const auto& r : ranges)
            if (q >= r.begin && q < r.end) return r.delta2;
        return 0.0;
    }
};

FlatSources flatten(const std::vector<ParticleCloud>& clouds, const double* delta_override);

void direct_sum(const FlatSources& src, const double* tx, const double* ty, std::size_t begin,
                std::size_t end, double* ux, double* uy);

void check_no_coincidence(const FlatSources& src, const Matrix2X<double>& pts);

Matrix2X<double> tree_sum(const FlatSources& src, const Matrix2X<double>& pts,
                          const TreeParams& params, int threads);

// Static partition of [0, n) into contiguous chunks. Each target is owned by exactly one
// worker, so results do not depend on the thread count.
template <typename Fn>
void parallel_blocks(std::size_t n, int threads, Fn&& fn) {
    const std::size_t t = static_cast<std::size_t>(std::max(1, threads));
    if (t == 1 || n < 64) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    // chunks are whole 8-target blocks, so the same targets take the vector path
    // whatever the thread count
    const std::size_t chunk = ((n + t - 1) / t + 7) / 8 * 8;
    for (std::size_t w = 0; w < t; ++w) {
        const std::size_t b = w * chunk, e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace detail
}  // namespace vortexlab
