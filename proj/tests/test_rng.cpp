#include "doctest.h"

#include <cmath>
#include <set>

#include "capann/rng.hpp"

using namespace capann;

TEST_CASE("engine is deterministic for a fixed seed") {
    rng::Engine a(12345), b(12345);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("substreams with different tags or indices diverge") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 100; ++i) {
        seen.insert(rng::substream(7, rng::kTagPoint, i));
        seen.insert(rng::substream(7, rng::kTagQuery, i));
    }
    CHECK(seen.size() == 200);
}

TEST_CASE("next_below is in range and hits all residues") {
    rng::Engine eng(99);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 1000; ++i) {
        const std::uint64_t v = eng.next_below(7);
        CHECK(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);
}

TEST_CASE("normal draws have roughly standard moments") {
    rng::Engine eng(4242);
    const int n = 200000;
    double s1 = 0, s2 = 0, s4 = 0;
    for (int i = 0; i < n; ++i) {
        const double x = eng.next_normal();
        s1 += x;
        s2 += x * x;
        s4 += x * x * x * x;
    }
    const double mean = s1 / n;
    const double var = s2 / n - mean * mean;
    const double kurt = s4 / n;
    CHECK(std::fabs(mean) < 0.01);
    CHECK(std::fabs(var - 1.0) < 0.02);
    CHECK(std::fabs(kurt - 3.0) < 0.1);
}

TEST_CASE("unit draws stay in [0,1) and positive variant in (0,1]") {
    rng::Engine eng(5);
    for (int i = 0; i < 10000; ++i) {
        const double u = eng.next_unit();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const double v = eng.next_unit_pos();
        CHECK(v > 0.0);
        CHECK(v <= 1.0);
    }
}
