// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <cmath>

#include "vipformer/contrast.hpp"
#include "vipformer/selfcheck.hpp"

using namespace vip;

namespace {

Tensor<double> rand_rows(std::size_t n, std::size_t d, RngStream& rng) {
    auto t = Tensor<double>::zeros({n, d});
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-1.0, 1.0);
    return t;
}

}  // namespace

TEST_SUITE("contrast") {

TEST_CASE("single-pair batch scores zero loss") {
    auto u = Tensor<double>::from_data({1, 4}, {1, 2, 3, 4});
    auto v = Tensor<double>::from_data({1, 4}, {-1, 0.5, 2, 1});
    CHECK(imc_loss(u, v, 0.5).item() == 0.0);
    CHECK(cmc_loss(u, v, 0.5).item() == 0.0);
}

TEST_CASE("all-identical embeddings give log(2N-1)") {
    for (std::size_t n : {2ul, 4ul, 7ul}) {
        std::vector<double> row{0.2, -0.4, 1.0};
        std::vector<double> data;
        for (std::size_t i = 0; i < n; ++i) data.insert(data.end(), row.begin(), row.end());
        auto u = Tensor<double>::from_data({n, 3}, data);
        auto v = Tensor<double>::from_data({n, 3}, data);
        const double want = std::log(2.0 * static_cast<double>(n) - 1.0);
        CHECK(std::abs(imc_loss(u, v, 0.7).item() - want) < 1e-9);
        CHECK(std::abs(cmc_loss(u, v, 0.7).item() - want) < 1e-9);
        if (n == 2) CHECK(imc_loss(u, v, 0.7).item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    }
}

TEST_CASE("orthogonal two-view case matches the direct evaluation") {
    auto p1 = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
    auto p2 = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
    const double got = imc_loss(p1, p2, 0.5).item();
    const double want = selfcheck::nt_xent_reference(p1.values(), p2.values(), 2, 2, 0.5);
    CHECK(std::abs(got - want) < 1e-10);
}

TEST_CASE("random three-row cross-modal case matches the direct evaluation") {
    RngStream rng(1);
    auto p = rand_rows(3, 5, rng);
    auto f = rand_rows(3, 5, rng);
    const double got = cmc_loss(p, f, 0.2).item();
    const double want = selfcheck::nt_xent_reference(p.values(), f.values(), 3, 5, 0.2);
    CHECK(std::abs(got - want) < 1e-10);
}

TEST_CASE("oracle equivalence over many random batches") {
    auto result = selfcheck::check_contrast_oracle(1000);
    CHECK_MESSAGE(result.pass, result.detail);
}

TEST_CASE("zero-norm rows are rejected") {
    auto u = Tensor<double>::from_data({2, 3}, {1, 2, 3, 0, 0, 0});
    auto v = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(imc_loss(u, v, 0.5), ContractError);
}

TEST_CASE("empty batches and bad temperatures are rejected") {
    auto u = Tensor<double>::zeros({0, 3});
    CHECK_THROWS_AS(imc_loss(u, u, 0.5), ShapeError);
    auto v = Tensor<double>::from_data({1, 2}, {1, 0});
    CHECK_THROWS_AS(imc_loss(v, v, 0.0), ParamError);
}

TEST_CASE("loss is invariant to positive per-row rescaling") {
    RngStream rng(2);
    auto u = rand_rows(5, 4, rng);
    auto v = rand_rows(5, 4, rng);
    const double base = imc_loss(u, v, 0.3).item();
    auto u2 = Tensor<double>::zeros({5, 4});
    auto v2 = Tensor<double>::zeros({5, 4});
    for (std::size_t i = 0; i < 5; ++i) {
        const double su = rng.uniform(0.1, 10.0), sv = rng.uniform(0.1, 10.0);
        for (std::size_t j = 0; j < 4; ++j) {
            u2.data()[i * 4 + j] = u.data()[i * 4 + j] * su;
            v2.data()[i * 4 + j] = v.data()[i * 4 + j] * sv;
        }
    }
    CHECK(std::abs(imc_loss(u2, v2, 0.3).item() - base) < 1e-6);
}

TEST_CASE("loss is invariant under a joint row permutation") {
    RngStream rng(3);
    auto u = rand_rows(6, 4, rng);
    auto v = rand_rows(6, 4, rng);
    const double base = imc_loss(u, v, 0.25).item();
    const std::size_t perm[6] = {4, 2, 0, 5, 1, 3};
    auto u2 = Tensor<double>::zeros({6, 4});
    auto v2 = Tensor<double>::zeros({6, 4});
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            u2.data()[i * 4 + j] = u.data()[perm[i] * 4 + j];
            v2.data()[i * 4 + j] = v.data()[perm[i] * 4 + j];
        }
    CHECK(std::abs(imc_loss(u2, v2, 0.25).item() - base) < 1e-10);
}

TEST_CASE("aligned positives with orthogonal negatives: loss shrinks with tau") {
    auto eye = Tensor<double>::from_data({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
    double prev = imc_loss(eye, eye, 1.0).item();
    for (double tau : {0.5, 0.2, 0.1, 0.05}) {
        const double cur = imc_loss(eye, eye, tau).item();
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("both losses pass the gradient check") {
    RngStream rng(4);
    auto u = rand_rows(4, 6, rng);
    auto v = rand_rows(4, 6, rng);
    auto u2 = rand_rows(4, 6, rng);
    auto v2 = rand_rows(4, 6, rng);
    CHECK(grad_check([&](Tensor<double>& t) { return imc_loss(t, v, 0.2); }, u) < 1e-4);
    CHECK(grad_check([&](Tensor<double>& t) { return imc_loss(u, t, 0.2); }, v) < 1e-4);
    CHECK(grad_check([&](Tensor<double>& t) { return cmc_loss(t, v2, 0.4); }, u2) < 1e-4);
    CHECK(grad_check([&](Tensor<double>& t) { return cmc_loss(u2, t, 0.4); }, v2) < 1e-4);
}

TEST_CASE("combined loss: alpha 0 equals the intra-modal term exactly") {
    RngStream rng(5);
    auto p1 = rand_rows(4, 5, rng);
    auto p2 = rand_rows(4, 5, rng);
    auto f = rand_rows(4, 5, rng);
    ContrastConfig cfg;
    cfg.alpha = 0.0;
    cfg.mode = ContrastConfig::Mode::Both;
    auto lb = combined_loss(p1, p2, f, cfg);
    CHECK(lb.total.item() == imc_loss(p1, p2, cfg.tau).item());
}

TEST_CASE("combined loss: alpha 1 sums the two terms, alpha 2 doubles the cross term") {
    RngStream rng(6);
    auto p1 = rand_rows(3, 5, rng);
    auto p2 = rand_rows(3, 5, rng);
    auto f = rand_rows(3, 5, rng);
    ContrastConfig cfg;
    const double a = imc_loss(p1, p2, cfg.tau).item();
    const double b = cmc_loss(p1, f, cfg.tau).item();
    cfg.alpha = 1.0;
    CHECK(combined_loss(p1, p2, f, cfg).total.item() == doctest::Approx(a + b).epsilon(1e-12));
    cfg.alpha = 2.0;
    CHECK(combined_loss(p1, p2, f, cfg).total.item() == doctest::Approx(a + 2 * b).epsilon(1e-12));
}

TEST_CASE("mode dispatch and missing-modality contract errors") {
    RngStream rng(7);
    auto p1 = rand_rows(3, 4, rng);
    auto p2 = rand_rows(3, 4, rng);
    auto f = rand_rows(3, 4, rng);
    ContrastConfig cfg;
    cfg.mode = ContrastConfig::Mode::ImcOnly;
    CHECK(combined_loss(p1, p2, Tensor<double>(), cfg).total.item() == imc_loss(p1, p2, cfg.tau).item());
    cfg.mode = ContrastConfig::Mode::CmcOnly;
    CHECK(combined_loss(p1, Tensor<double>(), f, cfg).total.item() == cmc_loss(p1, f, cfg.tau).item());
    cfg.mode = ContrastConfig::Mode::Both;
    CHECK_THROWS_AS(combined_loss(p1, p2, Tensor<double>(), cfg), ContractError);
    CHECK(std::string(ContrastConfig::mode_name(ContrastConfig::Mode::ImcOnly)) == "IMC only");
    CHECK(std::string(ContrastConfig::mode_name(ContrastConfig::Mode::CmcOnly)) == "CMC only");
    CHECK(std::string(ContrastConfig::mode_name(ContrastConfig::Mode::Both)) == "IMC & CMC");
}

}  // TEST_SUITE
