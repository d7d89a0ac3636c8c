// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "vipformer/model.hpp"
#include "vipformer/runconfig.hpp"
#include "vipformer/selfcheck.hpp"

using namespace vip;

TEST_SUITE("cli") {

TEST_CASE("unknown config keys are rejected by name") {
    RunConfig cfg;
    CHECK_THROWS_WITH_AS(cfg.set("model.depth", "9"), doctest::Contains("model.depth"), ParamError);
}

TEST_CASE("type errors in values are reported with the key") {
    RunConfig cfg;
    CHECK_THROWS_WITH_AS(cfg.set("model.layers", "nine"), doctest::Contains("model.layers"), ParamError);
    CHECK_THROWS_AS(cfg.set("contrast.tau", "0.1extra"), ParamError);
    CHECK_THROWS_AS(cfg.set("strict", "maybe"), ParamError);
}

TEST_CASE("command-line style overrides win over the config file") {
    const auto dir = std::filesystem::temp_directory_path() / "vipformer_test_cfg";
    std::filesystem::create_directories(dir);
    const auto path = dir / "run.cfg";
    {
        std::ofstream os(path);
        os << "# comment line\n";
        os << "model.dim = 128\n";
        os << "model.heads = 4\n";
        os << "contrast.tau = 0.2\n";
    }
    RunConfig cfg;
    cfg.load_file(path.string());
    CHECK(cfg.model.dim == 128);
    CHECK(cfg.contrast.tau == 0.2);
    cfg.set("model.dim", "256");  // override
    CHECK(cfg.model.dim == 256);
}

TEST_CASE("malformed config lines carry their line number") {
    const auto dir = std::filesystem::temp_directory_path() / "vipformer_test_cfg";
    std::filesystem::create_directories(dir);
    const auto path = dir / "broken.cfg";
    {
        std::ofstream os(path);
        os << "model.dim = 64\n";
        os << "this line has no equals\n";
    }
    RunConfig cfg;
    CHECK_THROWS_WITH_AS(cfg.load_file(path.string()), doctest::Contains("line 2"), ParamError);
}

TEST_CASE("resolved config echo round-trips through set()") {
    RunConfig cfg;
    cfg.model.dim = 192;
    cfg.model.heads = 6;
    cfg.contrast.alpha = 0.5;
    cfg.seed = 1234;
    RunConfig back;
    for (const auto& [k, v] : cfg.to_map())
        if (!v.empty()) back.set(k, v);
    CHECK(back.model.dim == 192);
    CHECK(back.contrast.alpha == 0.5);
    CHECK(back.seed == 1234);
    CHECK(back.to_map() == cfg.to_map());
}

TEST_CASE("shipped presets parse and match the built-in architectures") {
    const std::string base = VIPFORMER_SOURCE_DIR "/configs/";
    RunConfig small;
    small.load_file(base + "tableI.cfg");
    RunConfig large;
    large.load_file(base + "tableII.cfg");
    CHECK(count_parameters(small.model) == count_parameters(selfcheck::preset_small()));
    CHECK(count_parameters(large.model) == count_parameters(selfcheck::preset_large()));
}

TEST_CASE("preset parameter counts land on the published sizes") {
    const std::string base = VIPFORMER_SOURCE_DIR "/configs/";
    RunConfig small;
    small.load_file(base + "tableI.cfg");
    RunConfig large;
    large.load_file(base + "tableII.cfg");
    const long long small_count = count_parameters(small.model);
    const long long large_count = count_parameters(large.model);
    CHECK(std::llabs(small_count - 5100000LL) <= 5100000LL / 20);
    CHECK(std::llabs(large_count - 16700000LL) <= 16700000LL / 20);
}

TEST_CASE("mode strings parse to the documented labels") {
    CHECK(ContrastConfig::parse_mode("imc") == ContrastConfig::Mode::ImcOnly);
    CHECK(ContrastConfig::parse_mode("cmc_only") == ContrastConfig::Mode::CmcOnly);
    CHECK(ContrastConfig::parse_mode("both") == ContrastConfig::Mode::Both);
    CHECK_THROWS_AS(ContrastConfig::parse_mode("all"), ParamError);
}

}  // TEST_SUITE
