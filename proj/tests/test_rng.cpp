#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "bolt/rng.hpp"

using bolt::Pcg64;

TEST_CASE("pcg64 is deterministic and stream-separated") {
    Pcg64 a(42), b(42), c(42, 1), d(7);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    bool any_diff = false;
    Pcg64 a2(42);
    for (int i = 0; i < 100; ++i) any_diff |= (a2.next_u64() != c.next_u64());
    CHECK(any_diff);
    any_diff = false;
    Pcg64 a3(42);
    for (int i = 0; i < 100; ++i) any_diff |= (a3.next_u64() != d.next_u64());
    CHECK(any_diff);
}

TEST_CASE("uniform stays in [0,1) and covers the range") {
    Pcg64 rng(3);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("normal moments are plausible") {
    Pcg64 rng(11);
    const int n = 50000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sum_sq += z * z;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.04);
}

TEST_CASE("bounded draws are unbiased over small ranges") {
    Pcg64 rng(5);
    std::vector<int> counts(8, 0);
    const int n = 80000;
    for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(rng.bounded(8))];
    for (const int c : counts) CHECK(std::abs(c - n / 8) < 500);
}

TEST_CASE("shuffle is a permutation and seed-stable") {
    std::vector<int> items{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    Pcg64 rng(9);
    rng.shuffle(items);
    CHECK(std::set<int>(items.begin(), items.end()).size() == 10);
    std::vector<int> again{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    Pcg64 rng2(9);
    rng2.shuffle(again);
    CHECK(items == again);
}
