// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "vipformer/eval.hpp"
#include "vipformer/trainer.hpp"

using namespace vip;

namespace {

// Two well-separated Gaussian blobs.
void make_blobs(std::size_t per_class, std::size_t dim, double margin, std::vector<double>& features,
                std::vector<int>& labels, RngStream& rng) {
    features.clear();
    labels.clear();
    for (int c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            for (std::size_t d = 0; d < dim; ++d) {
                const double center = d == 0 ? (c == 0 ? 0.0 : margin) : 0.0;
                features.push_back(center + rng.normal());
            }
            labels.push_back(c);
        }
}

std::vector<std::size_t> evens(std::size_t n) {
    std::vector<std::size_t> v;
    for (std::size_t i = 0; i < n; i += 2) v.push_back(i);
    return v;
}

std::vector<std::size_t> odds(std::size_t n) {
    std::vector<std::size_t> v;
    for (std::size_t i = 1; i < n; i += 2) v.push_back(i);
    return v;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("probe separates wide-margin blobs") {
    RngStream rng(1);
    std::vector<double> feats;
    std::vector<int> labels;
    make_blobs(100, 8, 8.0, feats, labels, rng);  // centers 8 sigma apart
    const double acc = linear_probe(feats, 8, labels, evens(200), odds(200), 2);
    CHECK(acc >= 0.99);
}

TEST_CASE("probe scores chance on permuted labels") {
    RngStream rng(2);
    double sum = 0;
    const int trials = 10;
    for (int t = 0; t < trials; ++t) {
        std::vector<double> feats;
        std::vector<int> labels;
        const int classes = 4;
        for (int c = 0; c < classes; ++c)
            for (int i = 0; i < 40; ++i) {
                for (int d = 0; d < 6; ++d) feats.push_back(rng.normal());
                labels.push_back(c);  // labels carry no signal: features are iid noise
            }
        sum += linear_probe(feats, 6, labels, evens(160), odds(160), classes);
    }
    CHECK(std::abs(sum / trials - 0.25) < 0.1);
}

TEST_CASE("probe memorizes when train and test coincide") {
    RngStream rng(3);
    std::vector<double> feats;
    std::vector<int> labels;
    make_blobs(40, 4, 6.0, feats, labels, rng);
    std::vector<std::size_t> all(80);
    for (std::size_t i = 0; i < 80; ++i) all[i] = i;
    CHECK(linear_probe(feats, 4, labels, all, all, 2) == 1.0);
}

TEST_CASE("probe rejects a single-class training split") {
    RngStream rng(4);
    std::vector<double> feats;
    std::vector<int> labels;
    make_blobs(10, 3, 4.0, feats, labels, rng);
    std::vector<std::size_t> first_class{0, 1, 2, 3, 4};
    CHECK_THROWS_AS(linear_probe(feats, 3, labels, first_class, odds(20), 2), ContractError);
}

TEST_CASE("probe accuracy is invariant under invertible affine feature maps") {
    RngStream rng(5);
    std::vector<double> feats;
    std::vector<int> labels;
    make_blobs(60, 5, 3.0, feats, labels, rng);
    const double base = linear_probe(feats, 5, labels, evens(120), odds(120), 2);

    // random rotation-ish map plus anisotropic scaling and a shift
    double m[5][5];
    for (auto& row : m)
        for (auto& v : row) v = rng.uniform(-1, 1);
    for (int d = 0; d < 5; ++d) m[d][d] += 3.0;  // keep it comfortably invertible
    std::vector<double> mapped(feats.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (int a = 0; a < 5; ++a) {
            double acc = 0.7 * a;  // shift
            for (int b = 0; b < 5; ++b) acc += m[a][b] * feats[i * 5 + b];
            mapped[i * 5 + a] = acc;
        }
    const double transformed = linear_probe(mapped, 5, labels, evens(120), odds(120), 2);
    CHECK(std::abs(transformed - base) <= 0.01);
}

TEST_CASE("fewshot on degenerate per-class-identical features is perfect") {
    std::vector<double> feats;
    std::vector<int> labels;
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 30; ++i) {
            feats.push_back(c == 0 ? 1.0 : -1.0);
            feats.push_back(0.5);
            labels.push_back(c);
        }
    FewShotSpec spec;
    spec.n_way = 2;
    spec.k_shot = 1;
    spec.runs = 5;
    spec.query_per_class = 5;
    auto res = fewshot_episodes(feats, 2, labels, spec, RngStream(6));
    CHECK(res.mean == 1.0);
    CHECK(res.stddev == 0.0);
}

TEST_CASE("fewshot aggregates exactly the requested number of runs") {
    RngStream rng(7);
    std::vector<double> feats;
    std::vector<int> labels;
    for (int c = 0; c < 6; ++c)
        for (int i = 0; i < 40; ++i) {
            for (int d = 0; d < 4; ++d) feats.push_back(rng.normal() + 2.0 * c);
            labels.push_back(c);
        }
    FewShotSpec spec;
    spec.n_way = 3;
    spec.k_shot = 5;
    spec.runs = 10;
    spec.query_per_class = 10;
    auto res = fewshot_episodes(feats, 4, labels, spec, RngStream(8));
    CHECK(res.run_accuracies.size() == 10);
    CHECK(res.stddev >= 0.0);
    for (double a : res.run_accuracies) {
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
    }
}

TEST_CASE("fewshot on random features sits in the chance band") {
    RngStream rng(9);
    std::vector<double> feats;
    std::vector<int> labels;
    for (int c = 0; c < 5; ++c)
        for (int i = 0; i < 60; ++i) {
            for (int d = 0; d < 16; ++d) feats.push_back(rng.normal());
            labels.push_back(c);
        }
    FewShotSpec spec;
    spec.n_way = 5;
    spec.k_shot = 10;
    spec.runs = 10;
    spec.query_per_class = 20;
    auto res = fewshot_episodes(feats, 16, labels, spec, RngStream(10));
    CHECK(res.mean > 0.05);
    CHECK(res.mean < 0.35);
}

TEST_CASE("fewshot mean is invariant to bijective relabeling") {
    RngStream rng(11);
    std::vector<double> feats;
    std::vector<int> labels;
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 30; ++i) {
            for (int d = 0; d < 3; ++d) feats.push_back(rng.normal() + 1.5 * c);
            labels.push_back(c);
        }
    FewShotSpec spec;
    spec.n_way = 2;
    spec.k_shot = 3;
    spec.runs = 6;
    spec.query_per_class = 5;
    auto base = fewshot_episodes(feats, 3, labels, spec, RngStream(12));
    const int remap[4] = {2, 0, 3, 1};
    std::vector<int> relabeled(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) relabeled[i] = remap[labels[i]];
    auto permuted = fewshot_episodes(feats, 3, relabeled, spec, RngStream(12));
    CHECK(base.mean == permuted.mean);
}

TEST_CASE("fewshot rejects infeasible specs") {
    std::vector<double> feats{1, 2, 3, 4};
    std::vector<int> labels{0, 1};
    FewShotSpec spec;
    spec.n_way = 2;
    spec.k_shot = 5;
    spec.query_per_class = 5;
    CHECK_THROWS_AS(fewshot_episodes(feats, 2, labels, spec, RngStream(0)), ParamError);
}

TEST_CASE("embedding extraction is deterministic, ordered, and duplicates rows on duplicate requests") {
    const auto root = std::filesystem::temp_directory_path() / "vipformer_test_embed";
    std::filesystem::remove_all(root);
    GenerateOptions opt;
    opt.class_count = 2;
    opt.per_class = 4;
    opt.n_points = 96;
    opt.image_size = 16;
    opt.views = 1;
    opt.seed = 13;
    LoadedDataset<float> data(generate_synthetic(root, opt));

    ViPFormerConfig mc;
    mc.layers = 1;
    mc.heads = 2;
    mc.dim = 16;
    mc.mlp_ratio = 2;
    mc.point_tokens = 8;
    mc.neighbors = 8;
    mc.patch = 8;
    mc.image_size = 16;
    mc.eval_points = 64;
    mc.adapter_hidden = 8;
    auto w = init_weights<float>(mc, RngStream(14));
    {
        // one training batch to populate the BatchNorm statistics
        auto patches = Tensor<float>::zeros({4, 8, 24});
        auto centers = Tensor<float>::zeros({4, 8, 3});
        RngStream rng(15);
        for (std::size_t i = 0; i < patches.size(); ++i) patches.data()[i] = static_cast<float>(rng.uniform(-1, 1));
        for (std::size_t i = 0; i < centers.size(); ++i) centers.data()[i] = static_cast<float>(rng.uniform(-1, 1));
        NoGradGuard ng;
        point_branch_features(patches, centers, w, true, 0);
    }

    std::vector<std::size_t> indices{0, 3, 3, 5};
    std::vector<double> f1, f2;
    std::vector<int> l1, l2;
    extract_embeddings(w, data, indices, 99, f1, l1);
    extract_embeddings(w, data, indices, 99, f2, l2);
    CHECK(f1 == f2);
    CHECK(l1 == l2);
    const std::size_t dim = static_cast<std::size_t>(mc.resolved_out_dim());
    REQUIRE(f1.size() == indices.size() * dim);
    for (std::size_t d = 0; d < dim; ++d) CHECK(f1[1 * dim + d] == f1[2 * dim + d]);  // duplicated request
    CHECK(l1[0] == data.entry(0).class_id);
    CHECK(l1[3] == data.entry(5).class_id);
}

}  // TEST_SUITE
