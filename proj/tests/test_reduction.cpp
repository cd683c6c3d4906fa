#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "stockpot/reduction.hpp"

using namespace stockpot;

namespace {

long double reference_sum(const std::vector<double>& values) {
    long double acc = 0.0L;
    for (const double v : values) acc += static_cast<long double>(v);
    return acc;
}

}  // namespace

TEST_CASE("pairwise sum of exact integers") {
    for (const std::size_t n : {0ul, 1ul, 127ul, 128ul, 129ul, 255ul, 256ul, 257ul, 100000ul}) {
        std::vector<double> values(n);
        for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<double>(i + 1);
        const double expected = static_cast<double>(n) * static_cast<double>(n + 1) / 2.0;
        CHECK(pairwise_sum(values) == expected);
    }
}

TEST_CASE("pairwise sum tracks a long-double reference") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> gauss(0.25, 1.0);
    for (const std::size_t n : {10ul, 128ul, 1000ul, 65536ul, 100001ul}) {
        std::vector<double> values(n);
        for (double& v : values) v = gauss(rng);
        const double got = pairwise_sum(values);
        const long double want = reference_sum(values);
        const double scale = std::max(1.0, static_cast<double>(std::fabs(want)));
        CHECK(std::fabs(static_cast<double>(want - static_cast<long double>(got))) / scale <
              1e-12);
    }
}

TEST_CASE("pairwise dot and sumsq") {
    std::vector<double> a{1.0, 2.0, 3.0};
    std::vector<double> b{4.0, -5.0, 6.0};
    CHECK(pairwise_dot(a, b) == 4.0 - 10.0 + 18.0);
    CHECK(pairwise_sumsq(b) == 16.0 + 25.0 + 36.0);
}

TEST_CASE("functor form sums a strided view") {
    std::vector<double> values(1000);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(i % 7);
    const double direct = pairwise_sum(values);
    const double via_functor =
        pairwise_sum(0, values.size(), [&](std::uint64_t i) { return values[i]; });
    CHECK(direct == via_functor);
}

TEST_CASE("tree shape is fixed: subranges combine to the same total") {
    // Summing [0, n) must equal summing the two fixed subtrees directly.
    std::mt19937_64 rng(17);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> values(777);
    for (double& v : values) v = gauss(rng);
    const auto at = [&](std::uint64_t i) { return values[i]; };
    const double whole = pairwise_sum(0, values.size(), at);
    const double split = pairwise_sum(0, 512, at) + pairwise_sum(512, values.size(), at);
    CHECK(whole == split);
}
