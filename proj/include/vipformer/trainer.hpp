// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0
//
// Training loops. Pretraining optimizes the contrastive objectives on
// paired (point cloud, image) batches with per-epoch zero-shot probing and
// best-checkpoint retention; finetuning trains the classification head (and
// optionally the encoder) with cross-entropy.
//
// Every random draw derives from (seed, purpose, epoch, step, slot), never
// from consumed stream state, so a resumed run replays the exact tail of an
// uninterrupted one.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vipformer/checkpoint.hpp"
#include "vipformer/contrast.hpp"
#include "vipformer/data.hpp"
#include "vipformer/eval.hpp"
#include "vipformer/model.hpp"
#include "vipformer/optim.hpp"
#include "vipformer/runconfig.hpp"
#include "vipformer/tokenize.hpp"
#include "vipformer/trainer_records.hpp"

namespace vip {

namespace detail {

template <typename Real>
std::vector<std::pair<std::string, Tensor<Real>>> trainable_params(ModelWeights<Real>& w) {
    std::vector<std::pair<std::string, Tensor<Real>>> params;
    w.for_each_param([&](const std::string& name, Tensor<Real>& t) {
        if (t.requires_grad()) params.emplace_back(name, t);
    });
    return params;
}

template <typename Real>
Checkpoint snapshot(ModelWeights<Real>& w, AdamW<Real>& opt, const RunConfig& cfg, int next_epoch,
                    int next_step, long global_step, double best_metric, int best_epoch) {
    Checkpoint ckpt;
    pack_weights(w, ckpt);
    pack_optimizer(opt, ckpt);
    ckpt.meta["config"] = cfg.to_map();
    ckpt.meta["scheduler"] = {{"base_peak", cfg.sched.base_peak},
                              {"peak_decay", cfg.sched.peak_decay},
                              {"cycle_len", cfg.sched.cycle_len},
                              {"warmup_len", cfg.sched.warmup_len}};
    ckpt.meta["progress"] = {{"epoch", next_epoch}, {"step_in_epoch", next_step}, {"global_step", global_step}};
    ckpt.meta["rng"] = {{"seed", cfg.seed}};
    ckpt.meta["best"] = {{"metric", best_metric}, {"epoch", best_epoch}};
    return ckpt;
}

inline void check_resume_config(const Checkpoint& ckpt, const RunConfig& cfg) {
    const auto stored = ckpt.meta.at("config").get<std::map<std::string, std::string>>();
    const auto now = cfg.to_map();
    for (const auto& [k, v] : now) {
        if (k.rfind("model.", 0) != 0) continue;
        auto it = stored.find(k);
        if (it == stored.end() || it->second != v)
            throw FormatError("checkpoint architecture mismatch on '" + k + "': checkpoint has " +
                              (it == stored.end() ? std::string("<missing>") : it->second) + ", run wants " + v);
    }
    if (ckpt.meta.at("rng").at("seed").get<std::uint64_t>() != cfg.seed)
        throw FormatError("checkpoint was produced with a different seed; resume requires the same seed");
}

inline std::string metrics_line(const EpochRecord& r) {
    std::ostringstream os;
    os.precision(10);
    os << r.epoch << '\t' << r.imc << '\t' << r.cmc << '\t' << r.total << '\t' << r.lr << '\t' << r.probe_acc;
    return os.str();
}

}  // namespace detail

template <typename Real>
struct PretrainResult {
    Checkpoint final_checkpoint;
    Checkpoint best_checkpoint;
    std::vector<StepRecord> steps;    // steps executed by this call
    std::vector<EpochRecord> epochs;  // epochs completed by this call
    double best_probe = -1.0;
    int best_epoch = -1;
};

template <typename Real>
class PretrainRun {
public:
    PretrainRun(const LoadedDataset<Real>& dataset, RunConfig cfg) : data_(dataset), cfg_(std::move(cfg)) {
        cfg_.validate();
        if (cfg_.contrast.mode != ContrastConfig::Mode::ImcOnly && data_.views() < 1)
            throw DataError("pretrain: dataset has no rendered views but the objective needs images");
    }

    // max_steps < 0 runs to the configured epoch budget; `progress`, when
    // given, receives one line per epoch.
    PretrainResult<Real> run(const std::optional<Checkpoint>& resume = std::nullopt, long max_steps = -1,
                             std::ostream* progress = nullptr) {
        configure_threads(cfg_);
        const RngStream root(cfg_.seed);

        ModelWeights<Real> w = init_weights<Real>(cfg_.model, root);
        AdamW<Real> opt(detail::trainable_params(w), cfg_.adamw);

        int start_epoch = 0, start_step = 0;
        long global_step = 0;
        double best_probe = -1.0;
        int best_epoch = -1;
        if (resume) {
            detail::check_resume_config(*resume, cfg_);
            unpack_weights(*resume, w);
            unpack_optimizer(*resume, opt);
            start_epoch = resume->meta.at("progress").at("epoch").get<int>();
            start_step = resume->meta.at("progress").at("step_in_epoch").get<int>();
            global_step = resume->meta.at("progress").at("global_step").get<long>();
            best_probe = resume->meta.at("best").at("metric").get<double>();
            best_epoch = resume->meta.at("best").at("epoch").get<int>();
        }

        const auto train_idx = data_.manifest().split_indices("train");
        const auto val_idx = data_.manifest().split_indices("val");
        const auto test_idx = data_.manifest().split_indices("test");
        if (train_idx.size() < static_cast<std::size_t>(cfg_.batch_size))
            throw ContractError("pretrain: train split (" + std::to_string(train_idx.size()) +
                                ") smaller than the batch size");
        const bool can_probe = !val_idx.empty() && !test_idx.empty();

        PretrainResult<Real> res;
        res.best_probe = best_probe;
        res.best_epoch = best_epoch;

        std::ofstream metrics;
        if (!cfg_.out_dir.empty()) {
            std::filesystem::create_directories(cfg_.out_dir);
            cfg_.write_resolved(cfg_.out_dir + "/resolved.cfg");
            // Keep an earlier best checkpoint alive across a resumed run.
            if (resume && std::filesystem::exists(cfg_.out_dir + "/best.ckpt"))
                res.best_checkpoint = load_checkpoint(cfg_.out_dir + "/best.ckpt");
            metrics.open(cfg_.out_dir + "/metrics.tsv", start_epoch == 0 && start_step == 0
                                                            ? std::ios::trunc
                                                            : std::ios::app);
        }

        long steps_this_call = 0;
        int epoch = start_epoch;
        for (; epoch < cfg_.epochs; ++epoch) {
            const auto batches = epoch_batches(train_idx.size(), static_cast<std::size_t>(cfg_.batch_size), true,
                                               root.fork(RngPurpose::Shuffle).fork(epoch));
            double sum_imc = 0, sum_cmc = 0, sum_total = 0, sum_lr = 0;
            std::size_t steps_in_epoch = 0;
            // Mid-epoch resume replays the epoch's deterministic batch order
            // and skips the steps already taken; the epoch means then cover
            // the executed tail only.
            const int first_step = epoch == start_epoch ? start_step : 0;
            for (std::size_t s = static_cast<std::size_t>(first_step); s < batches.size(); ++s) {
                if (max_steps >= 0 && steps_this_call == max_steps) {
                    finalize(res, w, opt, epoch, static_cast<int>(s), global_step, best_probe, best_epoch,
                             metrics);
                    return res;
                }
                const double lr =
                    cfg_.lr_per_step
                        ? lr_at(cfg_.sched, epoch + static_cast<double>(s) / static_cast<double>(batches.size()))
                        : lr_at(cfg_.sched, epoch);
                StepRecord rec = train_step(w, opt, train_idx, batches[s], root, epoch, static_cast<int>(s), lr);
                sum_imc += rec.imc;
                sum_cmc += rec.cmc;
                sum_total += rec.total;
                sum_lr += rec.lr;
                res.steps.push_back(rec);
                ++steps_in_epoch;
                ++steps_this_call;
                ++global_step;
            }

            EpochRecord er;
            er.epoch = epoch + 1;
            const double nb = static_cast<double>(std::max<std::size_t>(steps_in_epoch, 1));
            er.imc = sum_imc / nb;
            er.cmc = sum_cmc / nb;
            er.total = sum_total / nb;
            er.lr = sum_lr / nb;
            er.probe_acc = std::numeric_limits<double>::quiet_NaN();
            if (can_probe) {
                er.probe_acc = probe_accuracy(w, val_idx, test_idx);
                if (er.probe_acc > best_probe) {
                    best_probe = er.probe_acc;
                    best_epoch = epoch + 1;
                    res.best_checkpoint =
                        detail::snapshot(w, opt, cfg_, epoch + 1, 0, global_step, best_probe, best_epoch);
                }
            }
            res.epochs.push_back(er);
            if (metrics.is_open()) metrics << detail::metrics_line(er) << '\n' << std::flush;
            if (progress) (*progress) << "  epoch " << detail::metrics_line(er) << std::endl;
        }

        finalize(res, w, opt, epoch, 0, global_step, best_probe, best_epoch, metrics);
        return res;
    }

private:
    StepRecord train_step(ModelWeights<Real>& w, AdamW<Real>& opt, const std::vector<std::size_t>& train_idx,
                          const std::vector<std::size_t>& batch, const RngStream& root, int epoch, int step,
                          double lr) {
        const auto mode = cfg_.contrast.mode;
        const bool need_t2 = mode != ContrastConfig::Mode::CmcOnly;
        const bool need_img = mode != ContrastConfig::Mode::ImcOnly;
        const std::size_t bsz = batch.size();
        const std::size_t g = static_cast<std::size_t>(cfg_.model.point_tokens);
        const std::size_t k = static_cast<std::size_t>(cfg_.model.neighbors);
        const std::size_t c2 = static_cast<std::size_t>(cfg_.model.point_channels);
        const std::size_t m = static_cast<std::size_t>(cfg_.model.image_tokens());
        const std::size_t img_len = static_cast<std::size_t>(cfg_.model.image_patch_len());

        auto patches1 = Tensor<Real>::zeros({bsz, g, k * c2});
        auto centers1 = Tensor<Real>::zeros({bsz, g, c2});
        Tensor<Real> patches2, centers2, img_patches;
        if (need_t2) {
            patches2 = Tensor<Real>::zeros({bsz, g, k * c2});
            centers2 = Tensor<Real>::zeros({bsz, g, c2});
        }
        if (need_img) img_patches = Tensor<Real>::zeros({bsz, m, img_len});

        const RngStream aug_base = root.fork(RngPurpose::Augment).fork(epoch).fork(step);
        const RngStream samp_base = root.fork(RngPurpose::Sampling).fork(epoch).fork(step);
        const RngStream view_base = root.fork(RngPurpose::ViewSelect).fork(epoch).fork(step);

        std::exception_ptr failure = nullptr;
#pragma omp parallel for schedule(dynamic)
        for (std::size_t j = 0; j < bsz; ++j) {
            try {
                const std::size_t entry = train_idx[batch[j]];
                const RngStream samp = samp_base.fork(j);
                auto cloud =
                    data_.points(entry, static_cast<std::size_t>(cfg_.model.pretrain_points), samp.fork(0));
                const RngStream aug = aug_base.fork(j);
                auto fill = [&](const Tensor<Real>& view, Tensor<Real>& p_out, Tensor<Real>& c_out,
                                std::uint64_t tag) {
                    RngStream fps = samp.fork(tag);
                    auto seq = build_point_patches(view, g, k, fps);
                    std::copy(seq.patches.data(), seq.patches.data() + seq.patches.size(),
                              p_out.data() + j * g * k * c2);
                    std::copy(seq.centers.data(), seq.centers.data() + seq.centers.size(),
                              c_out.data() + j * g * c2);
                };
                fill(apply_augmentation(cloud, cfg_.augment, aug.fork(1)), patches1, centers1, 1);
                if (need_t2) fill(apply_augmentation(cloud, cfg_.augment, aug.fork(2)), patches2, centers2, 2);
                if (need_img) {
                    RngStream vr = view_base.fork(j);
                    const std::size_t view = vr.uniform_index(static_cast<std::size_t>(data_.views()));
                    const bool hflip = cfg_.image_hflip && vr.uniform() < 0.5;
                    auto seq = patchify_image(data_.image(entry, view, hflip),
                                              static_cast<std::size_t>(cfg_.model.patch));
                    std::copy(seq.patches.data(), seq.patches.data() + seq.patches.size(),
                              img_patches.data() + j * m * img_len);
                }
            } catch (...) {
#pragma omp critical
                if (!failure) failure = std::current_exception();
            }
        }
        if (failure) std::rethrow_exception(failure);

        const RngStream drop = root.fork(RngPurpose::Dropout).fork(epoch).fork(step);
        Tensor<Real> p1 = point_branch_features(patches1, centers1, w, true, drop.fork(1).seed());
        Tensor<Real> p2, f;
        if (need_t2) p2 = point_branch_features(patches2, centers2, w, true, drop.fork(2).seed());
        if (need_img) f = image_branch_features(img_patches, w, true, drop.fork(3).seed());

        auto lb = combined_loss(p1, p2, f, cfg_.contrast);
        const double total = static_cast<double>(lb.total.item());
        if (!std::isfinite(total)) {
            // Weights are still pre-step; retain them before bailing out.
            if (!cfg_.out_dir.empty()) {
                auto ckpt = detail::snapshot(w, opt, cfg_, epoch, step, 0, -1.0, -1);
                save_checkpoint(ckpt, cfg_.out_dir + "/final.ckpt");
            }
            throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch + 1) + " step " +
                               std::to_string(step + 1) + "; last good checkpoint retained");
        }
        backward(lb.total);
        opt.step(lr);
        opt.zero_grad();

        StepRecord rec;
        rec.epoch = epoch + 1;
        rec.step = step + 1;
        rec.imc = lb.imc_value();
        rec.cmc = lb.cmc_value();
        rec.total = total;
        rec.lr = lr;
        return rec;
    }

    double probe_accuracy(ModelWeights<Real>& w, const std::vector<std::size_t>& probe_train,
                          const std::vector<std::size_t>& probe_test) {
        std::vector<std::size_t> all = probe_train;
        all.insert(all.end(), probe_test.begin(), probe_test.end());
        std::vector<double> feats;
        std::vector<int> labels;
        extract_embeddings(w, data_, all, cfg_.seed, feats, labels);
        std::vector<std::size_t> train_rows(probe_train.size()), test_rows(probe_test.size());
        for (std::size_t i = 0; i < train_rows.size(); ++i) train_rows[i] = i;
        for (std::size_t i = 0; i < test_rows.size(); ++i) test_rows[i] = probe_train.size() + i;
        return linear_probe(feats, static_cast<std::size_t>(cfg_.model.resolved_out_dim()), labels, train_rows,
                            test_rows, static_cast<int>(data_.manifest().class_names.size()), cfg_.probe);
    }

    void finalize(PretrainResult<Real>& res, ModelWeights<Real>& w, AdamW<Real>& opt, int next_epoch,
                  int next_step, long global_step, double best_probe, int best_epoch, std::ofstream& metrics) {
        res.best_probe = best_probe;
        res.best_epoch = best_epoch;
        res.final_checkpoint =
            detail::snapshot(w, opt, cfg_, next_epoch, next_step, global_step, best_probe, best_epoch);
        if (!res.best_checkpoint.tensors.size()) res.best_checkpoint = res.final_checkpoint;
        if (!cfg_.out_dir.empty()) {
            save_checkpoint(res.final_checkpoint, cfg_.out_dir + "/final.ckpt");
            save_checkpoint(res.best_checkpoint, cfg_.out_dir + "/best.ckpt");
        }
        if (metrics.is_open()) metrics.flush();
    }

    const LoadedDataset<Real>& data_;
    RunConfig cfg_;
};

// ---------------------------------------------------------------------------
// Finetuning
// ---------------------------------------------------------------------------

template <typename Real>
struct FinetuneResult {
    Checkpoint final_checkpoint;
    Checkpoint best_checkpoint;
    std::vector<FinetuneEpochRecord> epochs;
    std::vector<double> step_losses;
    double best_val_oa = 0.0;
    int best_epoch = 0;
};

template <typename Real>
class FinetuneRun {
public:
    FinetuneRun(const LoadedDataset<Real>& dataset, RunConfig cfg) : data_(dataset), cfg_(std::move(cfg)) {
        cfg_.validate();
    }

    // `init` supplies pretrained weights; absent means train from scratch.
    FinetuneResult<Real> run(const Checkpoint* init = nullptr) {
        configure_threads(cfg_);
        const RngStream root(cfg_.seed);
        const int classes = static_cast<int>(data_.manifest().class_names.size());
        if (classes < 1) throw DataError("finetune: dataset has no classes");

        ModelWeights<Real> w = init_weights<Real>(cfg_.model, root);
        if (init) unpack_weights(*init, w);
        if (!w.has_head) init_head(w, classes, root);
        if (w.head_classes != classes)
            throw DataError("finetune: checkpoint head has " + std::to_string(w.head_classes) +
                            " classes, dataset has " + std::to_string(classes));
        w.set_requires_grad(!cfg_.freeze_encoder, true);
        AdamW<Real> opt(detail::trainable_params(w), cfg_.adamw);

        const auto train_idx = data_.manifest().split_indices("train");
        const auto val_idx = data_.manifest().split_indices("val");
        if (train_idx.empty()) throw ContractError("finetune: empty train split");
        if (val_idx.empty()) throw ContractError("finetune: empty val split");

        FinetuneResult<Real> res;
        std::ofstream metrics;
        if (!cfg_.out_dir.empty()) {
            std::filesystem::create_directories(cfg_.out_dir);
            cfg_.write_resolved(cfg_.out_dir + "/resolved.cfg");
            metrics.open(cfg_.out_dir + "/metrics.tsv", std::ios::trunc);
        }

        double best = -1.0;
        int best_epoch = 0;
        auto consider = [&](double oa, int epoch_no) {
            if (oa > best) {
                best = oa;
                best_epoch = epoch_no;
                res.best_checkpoint = detail::snapshot(w, opt, cfg_, epoch_no, 0, opt.step_count(), best, epoch_no);
            }
        };

        if (cfg_.epochs == 0) consider(validation_oa(w, val_idx), 0);
        for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
            const auto batches =
                epoch_batches(train_idx.size(), std::min<std::size_t>(cfg_.batch_size, train_idx.size()), true,
                              root.fork(RngPurpose::Shuffle).fork(epoch));
            const double lr_epoch = lr_at(cfg_.sched, epoch);
            double loss_sum = 0;
            for (std::size_t s = 0; s < batches.size(); ++s) {
                const double lr = cfg_.lr_per_step
                                      ? lr_at(cfg_.sched,
                                              epoch + static_cast<double>(s) / static_cast<double>(batches.size()))
                                      : lr_epoch;
                const double loss = train_step(w, opt, train_idx, batches[s], root, epoch, static_cast<int>(s), lr);
                loss_sum += loss;
                res.step_losses.push_back(loss);
            }
            FinetuneEpochRecord er;
            er.epoch = epoch + 1;
            er.train_loss = loss_sum / static_cast<double>(batches.size());
            er.val_oa = validation_oa(w, val_idx);
            er.lr = lr_epoch;
            res.epochs.push_back(er);
            consider(er.val_oa, epoch + 1);
            if (metrics.is_open())
                metrics << er.epoch << '\t' << er.train_loss << '\t' << er.val_oa << '\t' << er.lr << '\n'
                        << std::flush;
        }

        res.best_val_oa = best;
        res.best_epoch = best_epoch;
        res.final_checkpoint = detail::snapshot(w, opt, cfg_, cfg_.epochs, 0, opt.step_count(), best, best_epoch);
        if (!res.best_checkpoint.tensors.size()) res.best_checkpoint = res.final_checkpoint;
        if (!cfg_.out_dir.empty()) {
            save_checkpoint(res.final_checkpoint, cfg_.out_dir + "/final.ckpt");
            save_checkpoint(res.best_checkpoint, cfg_.out_dir + "/best.ckpt");
        }
        return res;
    }

    // Overall accuracy of the classifier on a split, eval mode.
    double validation_oa(ModelWeights<Real>& w, const std::vector<std::size_t>& indices) {
        NoGradGuard ng;
        if (!w.has_head) throw ContractError("validation_oa: classifier head not initialized");
        std::size_t correct = 0;
        const std::size_t chunk = 32;
        for (std::size_t start = 0; start < indices.size(); start += chunk) {
            const std::size_t b = std::min(chunk, indices.size() - start);
            auto [patches, centers] = tokenize_eval(indices, start, b);
            auto pooled = point_branch_pooled(patches, centers, w, false, 0);
            auto logits = classify_forward(pooled, w, false, 0);
            const std::size_t c = logits.dim(1);
            for (std::size_t j = 0; j < b; ++j) {
                const Real* row = logits.data() + j * c;
                std::size_t arg = 0;
                for (std::size_t q = 1; q < c; ++q)
                    if (row[q] > row[arg]) arg = q;
                if (static_cast<int>(arg) == data_.entry(indices[start + j]).class_id) ++correct;
            }
        }
        return static_cast<double>(correct) / static_cast<double>(indices.size());
    }

private:
    double train_step(ModelWeights<Real>& w, AdamW<Real>& opt, const std::vector<std::size_t>& train_idx,
                      const std::vector<std::size_t>& batch, const RngStream& root, int epoch, int step,
                      double lr) {
        const std::size_t bsz = batch.size();
        const std::size_t g = static_cast<std::size_t>(cfg_.model.point_tokens);
        const std::size_t k = static_cast<std::size_t>(cfg_.model.neighbors);
        const std::size_t c2 = static_cast<std::size_t>(cfg_.model.point_channels);
        auto patches = Tensor<Real>::zeros({bsz, g, k * c2});
        auto centers = Tensor<Real>::zeros({bsz, g, c2});
        std::vector<int> labels(bsz);
        const RngStream aug_base = root.fork(RngPurpose::Augment).fork(epoch).fork(step);
        const RngStream samp_base = root.fork(RngPurpose::Sampling).fork(epoch).fork(step);
        std::exception_ptr failure = nullptr;
#pragma omp parallel for schedule(dynamic)
        for (std::size_t j = 0; j < bsz; ++j) {
            try {
                const std::size_t entry = train_idx[batch[j]];
                const RngStream samp = samp_base.fork(j);
                auto cloud = data_.points(entry, static_cast<std::size_t>(cfg_.model.eval_points), samp.fork(0));
                auto view = apply_augmentation(cloud, cfg_.augment, aug_base.fork(j));
                RngStream fps = samp.fork(1);
                auto seq = build_point_patches(view, g, k, fps);
                std::copy(seq.patches.data(), seq.patches.data() + seq.patches.size(),
                          patches.data() + j * g * k * c2);
                std::copy(seq.centers.data(), seq.centers.data() + seq.centers.size(), centers.data() + j * g * c2);
                labels[j] = data_.entry(entry).class_id;
            } catch (...) {
#pragma omp critical
                if (!failure) failure = std::current_exception();
            }
        }
        if (failure) std::rethrow_exception(failure);
        const RngStream drop = root.fork(RngPurpose::Dropout).fork(epoch).fork(step);
        auto pooled = point_branch_pooled(patches, centers, w, true, drop.fork(1).seed());
        auto logits = classify_forward(pooled, w, true, drop.fork(2).seed());
        auto loss = cross_entropy(logits, labels);
        const double value = static_cast<double>(loss.item());
        if (!std::isfinite(value))
            throw NumericError("finetune: non-finite loss at epoch " + std::to_string(epoch + 1) + " step " +
                               std::to_string(step + 1));
        backward(loss);
        opt.step(lr);
        opt.zero_grad();
        return value;
    }

    std::pair<Tensor<Real>, Tensor<Real>> tokenize_eval(const std::vector<std::size_t>& indices, std::size_t start,
                                                        std::size_t b) {
        const std::size_t g = static_cast<std::size_t>(cfg_.model.point_tokens);
        const std::size_t k = static_cast<std::size_t>(cfg_.model.neighbors);
        const std::size_t c2 = static_cast<std::size_t>(cfg_.model.point_channels);
        auto patches = Tensor<Real>::zeros({b, g, k * c2});
        auto centers = Tensor<Real>::zeros({b, g, c2});
        const RngStream base = RngStream(cfg_.seed).fork(RngPurpose::Eval);
        std::exception_ptr failure = nullptr;
#pragma omp parallel for schedule(dynamic)
        for (std::size_t j = 0; j < b; ++j) {
            try {
                const std::size_t idx = indices[start + j];
                RngStream srng = base.fork(idx);
                auto cloud = data_.points(idx, static_cast<std::size_t>(cfg_.model.eval_points), srng.fork(1));
                RngStream fps = srng.fork(2);
                auto seq = build_point_patches(cloud, g, k, fps);
                std::copy(seq.patches.data(), seq.patches.data() + seq.patches.size(),
                          patches.data() + j * g * k * c2);
                std::copy(seq.centers.data(), seq.centers.data() + seq.centers.size(), centers.data() + j * g * c2);
            } catch (...) {
#pragma omp critical
                if (!failure) failure = std::current_exception();
            }
        }
        if (failure) std::rethrow_exception(failure);
        return {patches, centers};
    }

    const LoadedDataset<Real>& data_;
    RunConfig cfg_;
};

}  // namespace vip
