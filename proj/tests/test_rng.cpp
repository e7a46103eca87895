#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "tmsm/rng.hpp"

using namespace tmsm;

TEST_CASE("streams are pure functions of their coordinates") {
    RngStream a(42, StreamId::covariate_z, 3, 7);
    RngStream b(42, StreamId::covariate_z, 3, 7);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    RngStream c(42, StreamId::covariate_z, 3, 8);
    RngStream d(42, StreamId::treatment, 3, 7);
    RngStream e(43, StreamId::covariate_z, 3, 7);
    RngStream base(42, StreamId::covariate_z, 3, 7);
    uint64_t x = base.next_u64();
    CHECK(c.next_u64() != x);
    CHECK(d.next_u64() != x);
    CHECK(e.next_u64() != x);
}

TEST_CASE("uniform stays inside (0,1)") {
    RngStream rng(1, StreamId::generic);
    for (int i = 0; i < 20000; ++i) {
        double u = rng.uniform();
        CHECK(u > 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("normal moments are sane") {
    RngStream rng(7, StreamId::generic);
    const int n = 200000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        double z = rng.normal();
        CHECK(std::isfinite(z));
        sum += z;
        sumsq += z * z;
    }
    double mean = sum / n;
    double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("bernoulli matches its probability") {
    RngStream rng(9, StreamId::generic);
    const int n = 100000;
    int hits = 0;
    for (int i = 0; i < n; ++i) hits += rng.bernoulli(0.3);
    CHECK(std::abs(hits / double(n) - 0.3) < 0.01);
}

TEST_CASE("uniform range endpoints") {
    RngStream rng(3, StreamId::generic);
    for (int i = 0; i < 1000; ++i) {
        double v = rng.uniform(50.0, 200.0);
        CHECK(v >= 50.0);
        CHECK(v <= 200.0);
    }
}
