// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "vipformer/data.hpp"
#include "vipformer/eval.hpp"

using namespace vip;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::vector<char> slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Handcrafted geometric descriptors, independent of any learned model:
// radial quantiles/moments, covariance eigenvalue ratios, vertical skewness,
// radius-height correlation, hole size, and cross-section squareness scores.
std::vector<double> moment_features(const Tensor<float>& pts) {
    const std::size_t n = pts.dim(0);
    std::vector<double> r(n), rho_all(n);
    double mx = 0, my = 0, mz = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += pts.data()[i * 3];
        my += pts.data()[i * 3 + 1];
        mz += pts.data()[i * 3 + 2];
    }
    mx /= n;
    my /= n;
    mz /= n;
    double cov[3][3] = {};
    double squareness = 0, rho_mean = 0, four_fold = 0, z3 = 0, rho_z = 0;
    std::size_t angular = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d[3] = {pts.data()[i * 3] - mx, pts.data()[i * 3 + 1] - my, pts.data()[i * 3 + 2] - mz};
        r[i] = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) cov[a][b] += d[a] * d[b];
        const double rho = std::sqrt(d[0] * d[0] + d[1] * d[1]);
        rho_all[i] = rho;
        rho_mean += rho;
        z3 += d[2] * d[2] * d[2];
        rho_z += rho * d[2];
        if (rho > 0.15) {
            squareness += (std::abs(d[0]) + std::abs(d[1])) / rho;
            four_fold += std::cos(4.0 * std::atan2(d[1], d[0]));
            ++angular;
        }
    }
    std::sort(r.begin(), r.end());
    std::sort(rho_all.begin(), rho_all.end());
    auto quant = [&](double q) { return r[static_cast<std::size_t>(q * (n - 1))]; };
    double mean_r = 0, var_r = 0;
    for (double v : r) mean_r += v;
    mean_r /= n;
    for (double v : r) var_r += (v - mean_r) * (v - mean_r);
    var_r /= n;

    // eigenvalues of the 3x3 covariance via cyclic Jacobi
    double a[3][3];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) a[i][j] = cov[i][j] / n;
    for (int sweep = 0; sweep < 16; ++sweep)
        for (int p = 0; p < 3; ++p)
            for (int q = p + 1; q < 3; ++q) {
                if (std::abs(a[p][q]) < 1e-14) continue;
                const double theta = 0.5 * std::atan2(2 * a[p][q], a[q][q] - a[p][p]);
                const double c = std::cos(theta), s = std::sin(theta);
                for (int k = 0; k < 3; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (int k = 0; k < 3; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
    std::vector<double> eig{a[0][0], a[1][1], a[2][2]};
    std::sort(eig.rbegin(), eig.rend());

    const double sz = std::sqrt(cov[2][2] / n) + 1e-12;
    const double srho = 1e-12 + std::sqrt(std::max(0.0, (cov[0][0] + cov[1][1]) / n));
    return {mean_r,
            std::sqrt(var_r),
            quant(0.1),
            quant(0.5),
            quant(0.9),
            eig[1] / (eig[0] + 1e-12),
            eig[2] / (eig[0] + 1e-12),
            angular ? squareness / angular : 0.0,
            angular ? four_fold / angular : 0.0,
            rho_mean / n,
            rho_all[static_cast<std::size_t>(0.05 * (n - 1))],  // hole size
            z3 / (n * sz * sz * sz),                            // vertical skewness
            rho_z / (n * srho * sz)};                           // radius-height correlation
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("sphere surface samples sit on the unit sphere before normalization") {
    ShapeSpec spec;
    spec.family = ShapeFamily::Sphere;
    RngStream rng(1);
    auto pts = sample_surface_points(spec, 500, rng);
    for (const auto& p : pts) {
        const double norm = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        CHECK(std::abs(norm - 1.0) < 1e-3);
    }
}

TEST_CASE("surface samples lie on the zero level set of their sdf") {
    RngStream rng(2);
    for (int f = 0; f < kShapeFamilyCount; ++f) {
        RngStream srng = rng.fork(f);
        auto spec = make_shape_spec(shape_family_from_index(f), srng);
        auto pts = sample_surface_points(spec, 200, srng);
        for (const auto& p : pts) CHECK(std::abs(shape_sdf(spec, p[0], p[1], p[2])) < 2e-3);
    }
}

TEST_CASE("generator writes the promised number of entries, views and splits") {
    auto dir = fresh_dir("vipformer_test_gen");
    GenerateOptions opt;
    opt.class_count = 8;
    opt.per_class = 8;
    opt.n_points = 64;
    opt.image_size = 24;
    opt.views = 4;
    opt.seed = 5;
    auto manifest = generate_synthetic(dir, opt);
    CHECK(manifest.entries.size() == 64);
    CHECK(manifest.class_names.size() == 8);
    for (const auto& e : manifest.entries) CHECK(e.image_files.size() == 4);
    CHECK(manifest.split_indices("train").size() == 48);
    CHECK(manifest.split_indices("val").size() == 8);
    CHECK(manifest.split_indices("test").size() == 8);
    // reload parses and validates
    auto loaded = DatasetManifest::load(dir);
    CHECK(loaded.entries.size() == 64);
    CHECK(loaded.class_names == manifest.class_names);
}

TEST_CASE("generator output is deterministic in the seed") {
    GenerateOptions opt;
    opt.class_count = 3;
    opt.per_class = 3;
    opt.n_points = 64;
    opt.image_size = 16;
    opt.views = 2;
    opt.seed = 42;
    auto d1 = fresh_dir("vipformer_test_det1");
    auto d2 = fresh_dir("vipformer_test_det2");
    auto m1 = generate_synthetic(d1, opt);
    auto m2 = generate_synthetic(d2, opt);
    for (std::size_t i = 0; i < m1.entries.size(); ++i) {
        CHECK(slurp(d1 / m1.entries[i].points_file) == slurp(d2 / m2.entries[i].points_file));
        for (std::size_t v = 0; v < m1.entries[i].image_files.size(); ++v)
            CHECK(slurp(d1 / m1.entries[i].image_files[v]) == slurp(d2 / m2.entries[i].image_files[v]));
    }
}

TEST_CASE("axis-aligned cube silhouette covers the analytic projection area") {
    ShapeSpec cube;
    cube.family = ShapeFamily::Cube;
    cube.p0 = cube.p1 = cube.p2 = 0.5;  // unit cube, half-extent 0.5
    const double scale = std::sqrt(3.0) * 0.5;  // corner norm
    auto img = render_silhouette(cube, {0, 0, 0}, scale, 0.0, 144);
    std::size_t fg = 0;
    for (auto px : img)
        if (px) ++fg;
    const double side_world = 1.0 / scale;  // normalized cube side
    const double expected = (side_world / (2.0 * kViewHalfExtent)) * (side_world / (2.0 * kViewHalfExtent));
    const double got = static_cast<double>(fg) / (144.0 * 144.0);
    CHECK(std::abs(got - expected) / expected < 0.05);
}

TEST_CASE("silhouette pixels are depth shaded within the documented band") {
    ShapeSpec sphere;
    sphere.family = ShapeFamily::Sphere;
    auto img = render_silhouette(sphere, {0, 0, 0}, 1.0, 0.3, 64);
    std::size_t fg = 0;
    for (auto px : img)
        if (px) {
            ++fg;
            CHECK(px >= static_cast<std::uint8_t>(kShadeFar * 255 - 1));
            CHECK(px <= static_cast<std::uint8_t>(kShadeNear * 255 + 1));
        }
    CHECK(fg > 0);
}

TEST_CASE("text and binary point files parse and round-trip") {
    auto dir = fresh_dir("vipformer_test_pts");
    std::vector<std::array<float, 3>> pts{{0.5f, -0.25f, 0.125f}, {1.0f, 2.0f, -3.0f}, {0.0f, 0.0f, 1.0f}};
    write_points_binary(dir / "a.vpts", pts);
    CHECK(read_points_file(dir / "a.vpts") == pts);
    write_points_text(dir / "a.xyz", pts);
    auto back = read_points_file(dir / "a.xyz");
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (int c = 0; c < 3; ++c) CHECK(back[i][c] == doctest::Approx(pts[i][c]).epsilon(1e-6));
}

TEST_CASE("malformed point files fail with located errors") {
    auto dir = fresh_dir("vipformer_test_badpts");
    {
        std::ofstream os(dir / "bad.xyz");
        os << "0 0 0\n1 2\n";
    }
    CHECK_THROWS_WITH_AS(read_points_file(dir / "bad.xyz"), doctest::Contains("line 2"), FormatError);
    {
        std::ofstream os(dir / "short.vpts", std::ios::binary);
        os << "VPTS";
        const std::uint32_t n = 10;
        os.write(reinterpret_cast<const char*>(&n), 4);
        os << "xx";
    }
    CHECK_THROWS_WITH_AS(read_points_file(dir / "short.vpts"), doctest::Contains("short"), FormatError);
}

TEST_CASE("load_points subsamples to the requested budget and normalizes") {
    auto dir = fresh_dir("vipformer_test_sub");
    RngStream rng(7);
    std::vector<std::array<float, 3>> pts(2048);
    for (auto& p : pts)
        p = {static_cast<float>(rng.uniform(-2, 2)), static_cast<float>(rng.uniform(-2, 2)),
             static_cast<float>(rng.uniform(-2, 2))};
    write_points_binary(dir / "big.vpts", pts);
    auto t = load_points<float>(dir / "big.vpts", 1024, RngStream(9));
    CHECK(t.dim(0) == 1024);
    double max_norm = 0;
    for (std::size_t i = 0; i < 1024; ++i)
        max_norm = std::max(max_norm, std::sqrt(static_cast<double>(t.data()[i * 3]) * t.data()[i * 3] +
                                                static_cast<double>(t.data()[i * 3 + 1]) * t.data()[i * 3 + 1] +
                                                static_cast<double>(t.data()[i * 3 + 2]) * t.data()[i * 3 + 2]));
    CHECK(max_norm <= 1.0 + 1e-6);
}

TEST_CASE("loading is a fixed point on its own output") {
    auto dir = fresh_dir("vipformer_test_fix");
    RngStream rng(8);
    std::vector<std::array<float, 3>> pts(256);
    for (auto& p : pts)
        p = {static_cast<float>(rng.uniform(-1, 3)), static_cast<float>(rng.uniform(-1, 3)),
             static_cast<float>(rng.uniform(-1, 3))};
    write_points_binary(dir / "raw.vpts", pts);
    auto once = load_points<float>(dir / "raw.vpts", 256, RngStream(1));
    std::vector<std::array<float, 3>> loaded(once.dim(0));
    for (std::size_t i = 0; i < loaded.size(); ++i)
        loaded[i] = {once.data()[i * 3], once.data()[i * 3 + 1], once.data()[i * 3 + 2]};
    write_points_binary(dir / "cooked.vpts", loaded);
    auto twice = load_points<float>(dir / "cooked.vpts", 256, RngStream(2));
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(once.data()[i] == twice.data()[i]);
}

TEST_CASE("ppm images round-trip") {
    auto dir = fresh_dir("vipformer_test_ppm");
    std::vector<std::uint8_t> gray(16 * 16);
    for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = static_cast<std::uint8_t>(i);
    write_ppm_gray(dir / "img.ppm", 16, gray);
    auto img = read_ppm(dir / "img.ppm");
    CHECK(img.width == 16);
    CHECK(img.height == 16);
    for (std::size_t i = 0; i < gray.size(); ++i) {
        CHECK(img.rgb[i * 3] == gray[i]);
        CHECK(img.rgb[i * 3 + 1] == gray[i]);
        CHECK(img.rgb[i * 3 + 2] == gray[i]);
    }
    {
        std::ofstream os(dir / "trunc.ppm", std::ios::binary);
        os << "P6\n16 16\n255\nxx";
    }
    CHECK_THROWS_WITH_AS(read_ppm(dir / "trunc.ppm"), doctest::Contains("truncated"), FormatError);
}

TEST_CASE("generator rejects unknown class families and bad options") {
    auto dir = fresh_dir("vipformer_test_badopt");
    GenerateOptions opt;
    opt.class_count = 9;  // only 8 families exist
    CHECK_THROWS_AS(generate_synthetic(dir, opt), ParamError);
    opt.class_count = 2;
    opt.views = 0;
    CHECK_THROWS_AS(generate_synthetic(dir, opt), ParamError);
}

TEST_CASE("epoch batching follows the drop-last and keep-last rules") {
    auto pre = epoch_batches(10, 4, true, RngStream(3));
    REQUIRE(pre.size() == 2);
    CHECK(pre[0].size() == 4);
    CHECK(pre[1].size() == 4);
    auto ev = epoch_batches(10, 4, false, RngStream(3));
    REQUIRE(ev.size() == 3);
    CHECK(ev[2].size() == 2);
    // deterministic under the same seed
    auto again = epoch_batches(10, 4, true, RngStream(3));
    CHECK(pre == again);
    CHECK_THROWS_AS(epoch_batches(0, 4, true, RngStream(0)), ContractError);
}

TEST_CASE("paired samples respect the type invariants") {
    auto dir = fresh_dir("vipformer_test_pair");
    GenerateOptions opt;
    opt.class_count = 2;
    opt.per_class = 3;
    opt.n_points = 64;
    opt.image_size = 16;
    opt.views = 2;
    opt.seed = 12;
    LoadedDataset<float> data(generate_synthetic(dir, opt));
    auto sample = data.paired_sample(0, 1, 64, RngStream(5));
    CHECK(sample.points.dim(1) == 3);
    double max_norm = 0;
    for (std::size_t i = 0; i < sample.points.dim(0); ++i) {
        double sq = 0;
        for (int c = 0; c < 3; ++c) sq += static_cast<double>(sample.points.data()[i * 3 + c]) *
                                          sample.points.data()[i * 3 + c];
        max_norm = std::max(max_norm, std::sqrt(sq));
    }
    CHECK(max_norm <= 1.0 + 1e-6);
    for (std::size_t i = 0; i < sample.image.size(); ++i) {
        CHECK(sample.image.data()[i] >= 0.0f);
        CHECK(sample.image.data()[i] <= 1.0f);
    }
}

TEST_CASE("handcrafted moment features separate every generated class") {
    auto dir = fresh_dir("vipformer_test_moments");
    GenerateOptions opt;
    opt.class_count = 8;
    opt.per_class = 32;
    opt.n_points = 256;
    opt.image_size = 16;
    opt.views = 1;
    opt.seed = 77;
    LoadedDataset<float> data(generate_synthetic(dir, opt));

    std::vector<double> features;
    std::vector<int> labels;
    std::size_t dim = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto f = moment_features(data.points(i, 256, RngStream(1)));
        dim = f.size();
        features.insert(features.end(), f.begin(), f.end());
        labels.push_back(data.entry(i).class_id);
    }
    // split every class 50/50 between probe train and test
    std::vector<std::size_t> train_rows, test_rows;
    std::vector<int> seen_per_class(8, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (seen_per_class[labels[i]]++ % 2 == 0)
            train_rows.push_back(i);
        else
            test_rows.push_back(i);
    }
    const double acc = linear_probe(features, dim, labels, train_rows, test_rows, 8);
    CHECK(acc >= 0.9);
}

}  // TEST_SUITE
