// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <cmath>

#include "vipformer/rng.hpp"

using namespace vip;

TEST_SUITE("rng") {

TEST_CASE("identical seed gives identical draws") {
    RngStream a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("forked substreams are independent of parent consumption") {
    RngStream parent(7);
    RngStream child_before = parent.fork(3);
    for (int i = 0; i < 50; ++i) parent.next_u64();
    RngStream child_after = parent.fork(3);
    for (int i = 0; i < 20; ++i) CHECK(child_before.next_u64() == child_after.next_u64());
}

TEST_CASE("distinct purposes give distinct streams") {
    RngStream root(1);
    CHECK(root.fork(RngPurpose::Init).next_u64() != root.fork(RngPurpose::Dropout).next_u64());
}

TEST_CASE("uniform stays in range and fills it") {
    RngStream rng(9);
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

TEST_CASE("normal has roughly unit variance") {
    RngStream rng(11);
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("shuffle is deterministic under the same seed") {
    std::vector<int> a{1, 2, 3, 4, 5, 6, 7, 8}, b = a;
    RngStream(5).shuffle(a);
    RngStream(5).shuffle(b);
    CHECK(a == b);
}

TEST_CASE("hashed_uniform is pure") {
    CHECK(hashed_uniform(123, 45) == hashed_uniform(123, 45));
    CHECK(hashed_uniform(123, 45) != hashed_uniform(123, 46));
}

}  // TEST_SUITE
