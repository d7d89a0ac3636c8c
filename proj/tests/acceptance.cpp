// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0
//
// Acceptance suite. Each criterion prints one [PASS]/[FAIL] line; the exit
// code is the number of failures. Run a single criterion by number, or
// `all`.

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "vipformer/eval.hpp"
#include "vipformer/runconfig.hpp"
#include "vipformer/selfcheck.hpp"
#include "vipformer/trainer.hpp"

using namespace vip;
using Real = float;

namespace {

struct Criterion {
    int id;
    const char* title;
    std::function<std::pair<bool, std::string>()> run;
};

// --------------------------------------------------------------------------
// Shared fixtures
// --------------------------------------------------------------------------

std::filesystem::path work_dir() {
    auto dir = std::filesystem::current_path() / "acceptance_work";
    std::filesystem::create_directories(dir);
    return dir;
}

// Full-scale corpus for the training-dynamics criterion: 8 classes x 64
// samples, 2048 points, 144x144 renders.
DatasetManifest full_corpus() {
    const auto root = work_dir() / "corpus_full";
    GenerateOptions opt;
    opt.class_count = 8;
    opt.per_class = 64;
    opt.n_points = 2048;
    opt.image_size = 144;
    opt.views = 4;
    opt.seed = 0;
    if (std::filesystem::exists(root / "manifest.json")) {
        try {
            auto m = DatasetManifest::load(root);
            if (m.entries.size() == 512 && m.points_per_cloud == 2048) return m;
        } catch (const Error&) {
        }
    }
    std::filesystem::remove_all(root);
    std::cout << "  generating synthetic corpus (512 samples, 4 views each)..." << std::endl;
    return generate_synthetic(root, opt);
}

// Small corpus for the harness criteria.
DatasetManifest small_corpus() {
    const auto root = work_dir() / "corpus_small";
    GenerateOptions opt;
    opt.class_count = 8;
    opt.per_class = 16;
    opt.n_points = 512;
    opt.image_size = 48;
    opt.views = 2;
    opt.seed = 1;
    if (std::filesystem::exists(root / "manifest.json")) {
        try {
            auto m = DatasetManifest::load(root);
            if (m.entries.size() == 128 && m.points_per_cloud == 512) return m;
        } catch (const Error&) {
        }
    }
    std::filesystem::remove_all(root);
    return generate_synthetic(root, opt);
}

RunConfig small_run_config() {
    RunConfig cfg;
    cfg.model.layers = 2;
    cfg.model.heads = 2;
    cfg.model.dim = 64;
    cfg.model.mlp_ratio = 2;
    cfg.model.point_tokens = 32;
    cfg.model.neighbors = 16;
    cfg.model.patch = 12;
    cfg.model.image_size = 48;
    cfg.model.pretrain_points = 512;
    cfg.model.eval_points = 256;
    cfg.model.adapter_hidden = 32;
    cfg.batch_size = 8;
    cfg.seed = 0;
    cfg.strict = true;
    cfg.probe.iters = 200;
    cfg.sched.warmup_len = 1.0;  // these harness runs are a handful of epochs
    cfg.lr_per_step = true;
    return cfg;
}

std::string pct(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v * 100.0 << "%";
    return os.str();
}

// --------------------------------------------------------------------------
// Criteria 1-6 lean on the shared verification battery.
// --------------------------------------------------------------------------

std::pair<bool, std::string> criterion_params() {
    const std::string base = std::string(VIPFORMER_SOURCE_DIR) + "/configs/";
    RunConfig small, large;
    small.load_file(base + "tableI.cfg");
    large.load_file(base + "tableII.cfg");
    const long long small_count = count_parameters(small.model);
    const long long large_count = count_parameters(large.model);
    const bool ok = std::llabs(small_count - 5100000LL) <= 5100000LL / 20 &&
                    std::llabs(large_count - 16700000LL) <= 16700000LL / 20;
    std::ostringstream os;
    os << "tableI.cfg -> " << small_count << " params (5.1M +-5%), tableII.cfg -> " << large_count
       << " params (16.7M +-5%)";
    return {ok, os.str()};
}

std::pair<bool, std::string> from_check(selfcheck::CheckResult r) { return {r.pass, r.detail}; }

// --------------------------------------------------------------------------
// Criterion 7: desk-scale training dynamics on the reference architecture.
// --------------------------------------------------------------------------

std::pair<bool, std::string> criterion_training_dynamics() {
    auto manifest = full_corpus();
    LoadedDataset<Real> data(manifest);

    RunConfig cfg;
    cfg.load_file(std::string(VIPFORMER_SOURCE_DIR) + "/configs/tableI.cfg");
    cfg.seed = 0;
    cfg.epochs = 30;
    cfg.out_dir = (work_dir() / "run7").string();
    std::cout << "  pretraining tableI architecture for 30 epochs on 8x64 samples (seed 0)..." << std::endl;
    PretrainRun<Real> run(data, cfg);
    auto res = run.run(std::nullopt, -1, &std::cout);

    const double first = res.epochs.front().total;
    const double last = res.epochs.back().total;
    const bool loss_ok = last <= 0.5 * first;
    const bool probe_ok = res.best_probe >= 0.60;
    std::ostringstream os;
    os << "loss epoch1 " << first << " -> epoch30 " << last << " (ratio " << last / first
       << ", need <= 0.5); best probe " << pct(res.best_probe) << " at epoch " << res.best_epoch
       << " (need >= 60%, chance 12.5%)";
    return {loss_ok && probe_ok, os.str()};
}

// --------------------------------------------------------------------------
// Criterion 8: pretrain-finetune vs train-from-scratch, bit-reproducible.
// --------------------------------------------------------------------------

std::pair<bool, std::string> criterion_strategy_comparison() {
    auto manifest = small_corpus();
    LoadedDataset<Real> data(manifest);

    auto pre_cfg = small_run_config();
    pre_cfg.epochs = 20;
    auto ft_cfg = small_run_config();
    ft_cfg.epochs = 40;

    auto one_round = [&]() {
        auto pre = PretrainRun<Real>(data, pre_cfg).run();
        auto scratch = FinetuneRun<Real>(data, ft_cfg).run(nullptr);
        auto warm = FinetuneRun<Real>(data, ft_cfg).run(&pre.best_checkpoint);
        return std::make_tuple(std::move(pre), std::move(scratch), std::move(warm));
    };

    std::cout << "  round 1 (pretrain + two finetunes)..." << std::endl;
    auto [pre1, scratch1, warm1] = one_round();
    std::cout << "  round 2 (identical rerun for bit-reproducibility)..." << std::endl;
    auto [pre2, scratch2, warm2] = one_round();

    std::cout << "\n  Learning strategy comparison (synthetic corpus, equal budgets)\n";
    std::cout << "    strategy            best val OA\n";
    std::cout << "    train from scratch  " << pct(scratch1.best_val_oa) << '\n';
    std::cout << "    pretrain-finetune   " << pct(warm1.best_val_oa) << "\n\n";

    bool reproducible = pre1.steps.size() == pre2.steps.size() &&
                        scratch1.step_losses.size() == scratch2.step_losses.size() &&
                        warm1.step_losses.size() == warm2.step_losses.size();
    if (reproducible) {
        for (std::size_t i = 0; i < pre1.steps.size(); ++i)
            reproducible = reproducible && pre1.steps[i].total == pre2.steps[i].total &&
                           pre1.steps[i].imc == pre2.steps[i].imc && pre1.steps[i].cmc == pre2.steps[i].cmc;
        for (std::size_t i = 0; i < scratch1.step_losses.size(); ++i)
            reproducible = reproducible && scratch1.step_losses[i] == scratch2.step_losses[i];
        for (std::size_t i = 0; i < warm1.step_losses.size(); ++i)
            reproducible = reproducible && warm1.step_losses[i] == warm2.step_losses[i];
        for (std::size_t i = 0; i < warm1.epochs.size(); ++i)
            reproducible = reproducible && warm1.epochs[i].val_oa == warm2.epochs[i].val_oa &&
                           scratch1.epochs[i].val_oa == scratch2.epochs[i].val_oa;
        for (std::size_t i = 0; i < pre1.epochs.size(); ++i)
            reproducible = reproducible && pre1.epochs[i].probe_acc == pre2.epochs[i].probe_acc;
    }

    std::ostringstream os;
    os << "scratch OA " << pct(scratch1.best_val_oa) << ", pretrain-finetune OA " << pct(warm1.best_val_oa)
       << "; strict-mode rerun " << (reproducible ? "bit-identical" : "DIVERGED");
    return {reproducible, os.str()};
}

// --------------------------------------------------------------------------
// Criterion 9: contrastive-objective ablation harness.
// --------------------------------------------------------------------------

std::pair<bool, std::string> criterion_objective_ablation() {
    auto manifest = small_corpus();
    LoadedDataset<Real> data(manifest);

    auto run_mode = [&](ContrastConfig::Mode mode, double alpha, const char* tag) {
        auto cfg = small_run_config();
        cfg.epochs = 3;
        cfg.contrast.mode = mode;
        cfg.contrast.alpha = alpha;
        cfg.out_dir = (work_dir() / (std::string("run9_") + tag)).string();
        return PretrainRun<Real>(data, cfg).run();
    };

    std::cout << "  training all three objective modes..." << std::endl;
    auto imc_only = run_mode(ContrastConfig::Mode::ImcOnly, 1.0, "imc");
    auto cmc_only = run_mode(ContrastConfig::Mode::CmcOnly, 1.0, "cmc");
    auto both = run_mode(ContrastConfig::Mode::Both, 1.0, "both");
    auto both_alpha0 = run_mode(ContrastConfig::Mode::Both, 0.0, "both_a0");

    bool finite = true;
    for (const auto* res : {&imc_only, &cmc_only, &both, &both_alpha0})
        for (const auto& s : res->steps) finite = finite && std::isfinite(s.total);

    // separable traces: each mode logs its own loss column
    bool separable = true;
    for (const auto& s : imc_only.steps) separable = separable && s.cmc == 0.0 && s.imc == s.total;
    for (const auto& s : cmc_only.steps) separable = separable && s.imc == 0.0 && s.cmc == s.total;
    for (const auto& s : both.steps) separable = separable && s.imc > 0.0 && s.cmc > 0.0;

    // alpha = 0 in combined mode reproduces the IMC-only losses exactly
    bool alpha0_exact = both_alpha0.steps.size() == imc_only.steps.size();
    if (alpha0_exact)
        for (std::size_t i = 0; i < imc_only.steps.size(); ++i)
            alpha0_exact = alpha0_exact && both_alpha0.steps[i].imc == imc_only.steps[i].imc &&
                           both_alpha0.steps[i].total == imc_only.steps[i].total;

    std::cout << "\n  Objective ablation (3 epochs each, mean epoch losses)\n";
    std::cout << "    mode        L_imc      L_cmc      L_total\n";
    auto line = [&](const char* name, const PretrainResult<Real>& r) {
        const auto& e = r.epochs.back();
        std::cout << "    " << name << "  " << e.imc << "  " << e.cmc << "  " << e.total << '\n';
    };
    line("IMC only ", imc_only);
    line("CMC only ", cmc_only);
    line("IMC & CMC", both);
    std::cout << '\n';

    std::ostringstream os;
    os << "all modes finite: " << (finite ? "yes" : "NO") << "; traces separable: " << (separable ? "yes" : "NO")
       << "; alpha=0 == IMC-only: " << (alpha0_exact ? "exact" : "MISMATCH");
    return {finite && separable && alpha0_exact, os.str()};
}

// --------------------------------------------------------------------------
// Criterion 10: resume equivalence.
// --------------------------------------------------------------------------

std::pair<bool, std::string> criterion_resume() {
    auto manifest = small_corpus();
    LoadedDataset<Real> data(manifest);
    auto cfg = small_run_config();
    cfg.epochs = 2;

    auto first = PretrainRun<Real>(data, cfg).run(std::nullopt, 3);
    auto resumed = PretrainRun<Real>(data, cfg).run(first.final_checkpoint, 3);
    auto straight = PretrainRun<Real>(data, cfg).run(std::nullopt, 6);

    bool ok = first.steps.size() == 3 && resumed.steps.size() == 3 && straight.steps.size() == 6;
    if (ok)
        for (std::size_t i = 0; i < 3; ++i)
            ok = ok && straight.steps[i].total == first.steps[i].total &&
                 straight.steps[3 + i].total == resumed.steps[i].total &&
                 straight.steps[3 + i].imc == resumed.steps[i].imc &&
                 straight.steps[3 + i].cmc == resumed.steps[i].cmc;

    // checkpoint file round-trip on the way through
    const auto path = (work_dir() / "resume.ckpt").string();
    save_checkpoint(first.final_checkpoint, path);
    auto reloaded = load_checkpoint(path);
    auto resumed_from_disk = PretrainRun<Real>(data, cfg).run(reloaded, 3);
    for (std::size_t i = 0; i < 3 && ok; ++i)
        ok = resumed_from_disk.steps[i].total == resumed.steps[i].total;

    std::ostringstream os;
    os << "3+3 resumed steps vs 6 straight: " << (ok ? "bit-identical loss trace" : "DIVERGED");
    return {ok, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
    const Criterion criteria[] = {
        {1, "parameter-count reproduction", criterion_params},
        {2, "contrastive-loss oracle equivalence",
         [] { return from_check(selfcheck::check_contrast_oracle(1000)); }},
        {3, "gradient checks vs central differences", [] { return from_check(selfcheck::check_gradients()); }},
        {4, "FPS/kNN oracle equivalence", [] { return from_check(selfcheck::check_fps_knn_oracle(100)); }},
        {5, "scheduler exactness", [] { return from_check(selfcheck::check_scheduler()); }},
        {6, "architectural invariants", [] { return from_check(selfcheck::check_arch_invariants()); }},
        {7, "desk-scale training dynamics", criterion_training_dynamics},
        {8, "learning-strategy comparison harness", criterion_strategy_comparison},
        {9, "contrastive-objective ablation harness", criterion_objective_ablation},
        {10, "checkpoint resume equivalence", criterion_resume},
    };

    std::vector<int> selected;
    if (argc <= 1 || std::strcmp(argv[1], "all") == 0) {
        for (const auto& c : criteria) selected.push_back(c.id);
    } else {
        for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
    }

    int failures = 0;
    for (const auto& c : criteria) {
        if (std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
        std::cout << "criterion " << c.id << ": " << c.title << std::endl;
        bool pass = false;
        std::string detail;
        try {
            std::tie(pass, detail) = c.run();
        } catch (const std::exception& e) {
            pass = false;
            detail = std::string("exception: ") + e.what();
        }
        std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << c.id << ": " << c.title << " :: " << detail
                  << '\n'
                  << std::endl;
        if (!pass) ++failures;
    }
    return failures;
}
