// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <cmath>

#include "vipformer/augment.hpp"

using namespace vip;

namespace {

Tensor<double> random_cloud(std::size_t n, RngStream& rng) {
    auto t = Tensor<double>::zeros({n, 3});
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-1.0, 1.0);
    return t;
}

double pairwise_dist(const Tensor<double>& pts, std::size_t i, std::size_t j) {
    double d = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        const double diff = pts.data()[i * 3 + c] - pts.data()[j * 3 + c];
        d += diff * diff;
    }
    return std::sqrt(d);
}

}  // namespace

TEST_SUITE("augment") {

TEST_CASE("identity spec returns the input bit for bit") {
    RngStream rng(1);
    auto cloud = random_cloud(64, rng);
    auto out = apply_augmentation(cloud, AugmentationSpec::identity(), RngStream(5));
    for (std::size_t i = 0; i < cloud.size(); ++i) CHECK(out.data()[i] == cloud.data()[i]);
}

TEST_CASE("rotation alone preserves pairwise distances") {
    RngStream rng(2);
    auto cloud = random_cloud(32, rng);
    AugmentationSpec spec = AugmentationSpec::identity();
    spec.rotation_min = 0.0;
    spec.rotation_max = 6.28;
    spec.rotation_axis = AugmentationSpec::RotationAxis::Arbitrary;
    auto out = apply_augmentation(cloud, spec, RngStream(7));
    for (std::size_t i = 0; i < 32; i += 5)
        for (std::size_t j = i + 1; j < 32; j += 7) {
            const double before = pairwise_dist(cloud, i, j);
            const double after = pairwise_dist(out, i, j);
            CHECK(std::abs(after - before) <= 1e-5 * std::max(1.0, before));
        }
}

TEST_CASE("jitter respects the clip and its empirical sigma") {
    AugmentationSpec spec = AugmentationSpec::identity();
    spec.jitter_sigma = 0.01;
    spec.jitter_clip = 0.05;
    const std::size_t n = 33334;  // > 1e5 coordinate draws
    auto cloud = Tensor<double>::zeros({n, 3});
    auto out = apply_augmentation(cloud, spec, RngStream(11));
    double sq = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(std::abs(out.data()[i]) <= 0.05);
        sq += out.data()[i] * out.data()[i];
    }
    const double std_dev = std::sqrt(sq / static_cast<double>(out.size()));
    CHECK(std_dev > 0.008);
    CHECK(std_dev < 0.012);
}

TEST_CASE("scale draws stay inside the configured range") {
    AugmentationSpec spec = AugmentationSpec::identity();
    spec.scale_min = 0.8;
    spec.scale_max = 1.2;
    auto cloud = Tensor<double>::from_data({1, 3}, {1.0, 0.0, 0.0});
    for (int t = 0; t < 200; ++t) {
        auto out = apply_augmentation(cloud, spec, RngStream(100 + t));
        const double norm = std::sqrt(out.data()[0] * out.data()[0] + out.data()[1] * out.data()[1] +
                                      out.data()[2] * out.data()[2]);
        CHECK(norm >= 0.8 - 1e-12);
        CHECK(norm <= 1.2 + 1e-12);
    }
}

TEST_CASE("invalid spec ranges are rejected") {
    AugmentationSpec spec;
    spec.scale_min = 1.5;
    spec.scale_max = 0.5;
    auto cloud = Tensor<double>::zeros({4, 3});
    CHECK_THROWS_AS(apply_augmentation(cloud, spec, RngStream(0)), ParamError);
}

TEST_CASE("two_views with the identity spec returns the input twice") {
    RngStream rng(3);
    auto cloud = random_cloud(16, rng);
    auto [a, b] = two_views(cloud, AugmentationSpec::identity(), RngStream(9));
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        CHECK(a.data()[i] == cloud.data()[i]);
        CHECK(b.data()[i] == cloud.data()[i]);
    }
}

TEST_CASE("two_views is reproducible and produces distinct views") {
    RngStream rng(4);
    auto cloud = random_cloud(16, rng);
    AugmentationSpec spec;  // defaults: all transforms on
    auto [a1, b1] = two_views(cloud, spec, RngStream(13));
    auto [a2, b2] = two_views(cloud, spec, RngStream(13));
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        CHECK(a1.data()[i] == a2.data()[i]);
        CHECK(b1.data()[i] == b2.data()[i]);
    }
    for (int t = 0; t < 50; ++t) {
        auto [a, b] = two_views(cloud, spec, RngStream(200 + t));
        bool differ = false;
        for (std::size_t i = 0; i < cloud.size() && !differ; ++i) differ = a.data()[i] != b.data()[i];
        CHECK(differ);
    }
}

}  // TEST_SUITE
