#pragma once

#include <bit>
#include <cstdint>
#include <span>

namespace stockpot {

// Fixed-shape pairwise (tree) summation. The tree depends only on the
// element count, never on thread count or chunking, so every reduction in
// the toolkit is bit-reproducible. Leaves are sequential runs of at most
// kReductionBlock elements; interior nodes split at the largest power of
// two below the range size.
inline constexpr std::uint64_t kReductionBlock = 128;

template <typename F>
double pairwise_sum(std::uint64_t begin, std::uint64_t end, F&& value_at) {
    const std::uint64_t n = end - begin;
    if (n <= kReductionBlock) {
        double acc = 0.0;
        for (std::uint64_t i = begin; i < end; ++i) acc += value_at(i);
        return acc;
    }
    const std::uint64_t half = std::bit_floor(n - 1);
    return pairwise_sum(begin, begin + half, value_at) +
           pairwise_sum(begin + half, end, value_at);
}

inline double pairwise_sum(std::span<const double> values) {
    return pairwise_sum(0, values.size(), [&](std::uint64_t i) { return values[i]; });
}

inline double pairwise_dot(std::span<const double> a, std::span<const double> b) {
    return pairwise_sum(0, a.size(), [&](std::uint64_t i) { return a[i] * b[i]; });
}

inline double pairwise_sumsq(std::span<const double> values) {
    return pairwise_sum(0, values.size(), [&](std::uint64_t i) { return values[i] * values[i]; });
}

}  // namespace stockpot
