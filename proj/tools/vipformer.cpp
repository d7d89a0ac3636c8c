// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0
//
// Command-line entry point. Subcommands: gen-data, pretrain, finetune,
// fewshot, embed, params, selftest. Exit codes: 0 success, 1 usage error,
// 2 data/format error, 3 numeric failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "vipformer/checkpoint.hpp"
#include "vipformer/data.hpp"
#include "vipformer/eval.hpp"
#include "vipformer/runconfig.hpp"
#include "vipformer/selfcheck.hpp"
#include "vipformer/trainer.hpp"

namespace {

using Real = float;  // training precision; verification paths run in double

vip::RunConfig config_from_checkpoint(const vip::Checkpoint& ckpt) {
    vip::RunConfig cfg;
    for (const auto& [k, v] : ckpt.meta.at("config").get<std::map<std::string, std::string>>()) cfg.set(k, v);
    return cfg;
}

vip::ModelWeights<Real> weights_from_checkpoint(const vip::Checkpoint& ckpt, const vip::RunConfig& cfg) {
    auto w = vip::init_weights<Real>(cfg.model, vip::RngStream(cfg.seed));
    vip::unpack_weights(ckpt, w);
    return w;
}

std::vector<std::size_t> resolve_split(const vip::DatasetManifest& m, const std::string& split) {
    if (split == "all") {
        std::vector<std::size_t> all(m.entries.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    auto idx = m.split_indices(split);
    if (idx.empty()) throw vip::DataError("split '" + split + "' is empty");
    return idx;
}

struct CommonFlags {
    std::string config_path;
    std::string data_dir;
    std::string out_dir;
    std::string from_checkpoint;
    std::uint64_t seed = 0;
    int epochs = -1;
    int batch_size = -1;
    int workers = -1;
    double alpha = -1, tau = -1;
    std::string mode;
    bool strict = false;
    bool freeze_encoder = false;
    bool lr_per_step = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool training) {
    cmd->add_option("--config", f.config_path, "key=value config file");
    cmd->add_option("--data", f.data_dir, "dataset root (directory with manifest.json)");
    cmd->add_option("--seed", f.seed, "run seed");
    cmd->add_option("--workers", f.workers, "worker threads (0 = all cores)");
    cmd->add_flag("--strict-deterministic", f.strict, "single-worker, bit-reproducible mode");
    if (training) {
        cmd->add_option("--out-dir", f.out_dir, "run output directory");
        cmd->add_option("--epochs", f.epochs, "training epochs");
        cmd->add_option("--batch-size", f.batch_size, "batch size");
        cmd->add_option("--mode", f.mode, "contrastive mode: imc|cmc|both");
        cmd->add_option("--alpha", f.alpha, "cross-modal loss weight");
        cmd->add_option("--tau", f.tau, "contrastive temperature");
        cmd->add_option("--from-checkpoint", f.from_checkpoint, "checkpoint to resume / initialize from");
        cmd->add_flag("--freeze-encoder", f.freeze_encoder, "finetune the head only");
        cmd->add_flag("--lr-per-step", f.lr_per_step, "smooth the schedule within epochs");
    } else {
        cmd->add_option("--from-checkpoint", f.from_checkpoint, "model checkpoint");
    }
}

bool flag_passed(const CLI::App* cmd, const std::string& name) {
    const auto* opt = cmd->get_option_no_throw(name);
    return opt && opt->count() > 0;
}

vip::RunConfig resolve_config(const CLI::App* cmd, const CommonFlags& f) {
    vip::RunConfig cfg;
    if (!f.config_path.empty()) cfg.load_file(f.config_path);
    if (flag_passed(cmd, "--seed")) cfg.seed = f.seed;
    if (flag_passed(cmd, "--data")) cfg.data_dir = f.data_dir;
    if (flag_passed(cmd, "--workers")) cfg.workers = f.workers;
    if (f.strict) cfg.strict = true;
    if (flag_passed(cmd, "--out-dir")) cfg.out_dir = f.out_dir;
    if (f.epochs >= 0) cfg.epochs = f.epochs;
    if (f.batch_size >= 0) cfg.batch_size = f.batch_size;
    if (!f.mode.empty()) cfg.contrast.mode = vip::ContrastConfig::parse_mode(f.mode);
    if (f.alpha >= 0) cfg.contrast.alpha = f.alpha;
    if (f.tau >= 0) cfg.contrast.tau = f.tau;
    if (flag_passed(cmd, "--from-checkpoint")) cfg.from_checkpoint = f.from_checkpoint;
    if (f.freeze_encoder) cfg.freeze_encoder = true;
    if (f.lr_per_step) cfg.lr_per_step = true;
    return cfg;
}

int run_dispatch(int argc, char** argv) {
    CLI::App app{"vipformer: unified image / point cloud transformer with contrastive pretraining"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic paired dataset");
    std::string gen_out;
    vip::GenerateOptions gen_opt;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--classes", gen_opt.class_count, "shape families (max 8)");
    gen->add_option("--per-class", gen_opt.per_class, "samples per class");
    gen->add_option("--points", gen_opt.n_points, "points per cloud");
    gen->add_option("--image-size", gen_opt.image_size, "rendered image size");
    gen->add_option("--views", gen_opt.views, "rendered views per sample");
    gen->add_option("--seed", gen_opt.seed, "generator seed");

    // pretrain / finetune
    auto* pre = app.add_subcommand("pretrain", "contrastive pretraining");
    CommonFlags pre_f;
    add_common(pre, pre_f, true);
    auto* fin = app.add_subcommand("finetune", "supervised classification finetuning");
    CommonFlags fin_f;
    add_common(fin, fin_f, true);

    // fewshot
    auto* few = app.add_subcommand("fewshot", "N-way K-shot evaluation on frozen features");
    CommonFlags few_f;
    add_common(few, few_f, false);
    vip::FewShotSpec few_spec;
    std::string few_split = "all";
    few->add_option("--n-way", few_spec.n_way, "classes per episode");
    few->add_option("--k-shot", few_spec.k_shot, "labeled samples per class");
    few->add_option("--runs", few_spec.runs, "episodes");
    few->add_option("--query", few_spec.query_per_class, "query samples per class");
    few->add_option("--split", few_split, "dataset split (train|val|test|all)");

    // embed
    auto* emb = app.add_subcommand("embed", "export frozen features as TSV");
    CommonFlags emb_f;
    add_common(emb, emb_f, false);
    std::string emb_out, emb_split = "all";
    emb->add_option("--out", emb_out, "output TSV path")->required();
    emb->add_option("--split", emb_split, "dataset split (train|val|test|all)");

    // params
    auto* par = app.add_subcommand("params", "print the learnable parameter count for a config");
    std::string par_config;
    par->add_option("--config", par_config, "key=value config file")->required();

    // selftest
    app.add_subcommand("selftest", "run the oracle and gradient verification suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            app.exit(e);
            return 0;
        }
        std::cerr << e.what() << "\n\n" << app.help() << std::flush;
        return 1;
    }

    if (gen->parsed()) {
        auto manifest = vip::generate_synthetic(gen_out, gen_opt);
        std::cout << "wrote " << manifest.entries.size() << " samples (" << manifest.class_names.size()
                  << " classes, " << manifest.views << " views) under " << gen_out << '\n';
        return 0;
    }

    if (pre->parsed()) {
        auto cfg = resolve_config(pre, pre_f);
        cfg.validate();
        if (cfg.data_dir.empty()) throw vip::ParamError("pretrain: --data (or data.dir) is required");
        vip::LoadedDataset<Real> data(vip::DatasetManifest::load(cfg.data_dir));
        std::optional<vip::Checkpoint> resume;
        if (!cfg.from_checkpoint.empty()) resume = vip::load_checkpoint(cfg.from_checkpoint);
        vip::PretrainRun<Real> run(data, cfg);
        auto res = run.run(resume);
        for (const auto& e : res.epochs)
            std::cout << "epoch " << e.epoch << "  imc " << e.imc << "  cmc " << e.cmc << "  total " << e.total
                      << "  lr " << e.lr << "  probe " << e.probe_acc << '\n';
        std::cout << "best probe accuracy " << res.best_probe << " at epoch " << res.best_epoch << '\n';
        return 0;
    }

    if (fin->parsed()) {
        auto cfg = resolve_config(fin, fin_f);
        cfg.validate();
        if (cfg.data_dir.empty()) throw vip::ParamError("finetune: --data (or data.dir) is required");
        vip::LoadedDataset<Real> data(vip::DatasetManifest::load(cfg.data_dir));
        std::optional<vip::Checkpoint> init;
        if (!cfg.from_checkpoint.empty()) init = vip::load_checkpoint(cfg.from_checkpoint);
        vip::FinetuneRun<Real> run(data, cfg);
        auto res = run.run(init ? &*init : nullptr);
        for (const auto& e : res.epochs)
            std::cout << "epoch " << e.epoch << "  loss " << e.train_loss << "  val OA " << e.val_oa << "  lr "
                      << e.lr << '\n';
        std::cout << (init ? "pretrain-finetune" : "train-from-scratch") << " best val OA " << res.best_val_oa
                  << " at epoch " << res.best_epoch << '\n';
        return 0;
    }

    if (few->parsed()) {
        auto cfg_cli = resolve_config(few, few_f);
        if (cfg_cli.from_checkpoint.empty()) throw vip::ParamError("fewshot: --from-checkpoint is required");
        auto ckpt = vip::load_checkpoint(cfg_cli.from_checkpoint);
        auto cfg = config_from_checkpoint(ckpt);
        cfg.strict = cfg_cli.strict;
        cfg.workers = cfg_cli.workers;
        vip::configure_threads(cfg);
        const std::string data_dir = !cfg_cli.data_dir.empty() ? cfg_cli.data_dir : cfg.data_dir;
        if (data_dir.empty()) throw vip::ParamError("fewshot: --data is required");
        vip::LoadedDataset<Real> data(vip::DatasetManifest::load(data_dir));
        auto w = weights_from_checkpoint(ckpt, cfg);
        auto indices = resolve_split(data.manifest(), few_split);
        std::vector<double> feats;
        std::vector<int> labels;
        vip::extract_embeddings(w, data, indices, cfg_cli.seed, feats, labels);
        auto result = vip::fewshot_episodes(feats, static_cast<std::size_t>(cfg.model.resolved_out_dim()), labels,
                                            few_spec, vip::RngStream(cfg_cli.seed).fork(vip::RngPurpose::Eval),
                                            cfg.probe);
        std::cout << few_spec.n_way << "-way " << few_spec.k_shot << "-shot over " << few_spec.runs
                  << " runs: " << result.mean * 100.0 << " +- " << result.stddev * 100.0 << " (accuracy %)\n";
        return 0;
    }

    if (emb->parsed()) {
        auto cfg_cli = resolve_config(emb, emb_f);
        if (cfg_cli.from_checkpoint.empty()) throw vip::ParamError("embed: --from-checkpoint is required");
        auto ckpt = vip::load_checkpoint(cfg_cli.from_checkpoint);
        auto cfg = config_from_checkpoint(ckpt);
        cfg.strict = cfg_cli.strict;
        cfg.workers = cfg_cli.workers;
        vip::configure_threads(cfg);
        const std::string data_dir = !cfg_cli.data_dir.empty() ? cfg_cli.data_dir : cfg.data_dir;
        if (data_dir.empty()) throw vip::ParamError("embed: --data is required");
        vip::LoadedDataset<Real> data(vip::DatasetManifest::load(data_dir));
        auto w = weights_from_checkpoint(ckpt, cfg);
        auto indices = resolve_split(data.manifest(), emb_split);
        std::vector<double> feats;
        std::vector<int> labels;
        vip::extract_embeddings(w, data, indices, cfg_cli.seed, feats, labels);
        const std::size_t dim = static_cast<std::size_t>(cfg.model.resolved_out_dim());
        std::ofstream os(emb_out, std::ios::trunc);
        if (!os) throw vip::FormatError("cannot write '" + emb_out + "'");
        os.precision(8);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            os << data.entry(indices[i]).id << '\t' << labels[i];
            for (std::size_t d = 0; d < dim; ++d) os << '\t' << feats[i * dim + d];
            os << '\n';
        }
        std::cout << "wrote " << indices.size() << " feature rows to " << emb_out << '\n';
        return 0;
    }

    if (par->parsed()) {
        vip::RunConfig cfg;
        cfg.load_file(par_config);
        std::cout << vip::count_parameters(cfg.model) << '\n';
        return 0;
    }

    // selftest
    const int failures = vip::selfcheck::run_quick_suite(std::cout);
    if (failures) {
        std::cerr << failures << " check(s) failed\n";
        return 3;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_dispatch(argc, argv);
    } catch (const vip::ParamError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const vip::NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const vip::Error& e) {  // shape/contract/data/format
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
