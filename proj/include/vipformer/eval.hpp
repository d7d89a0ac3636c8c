// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0
//
// Downstream evaluation on frozen features: embedding extraction, a linear
// probe (multinomial classifier on whitened features, optional hinge loss),
// and N-way K-shot episodes.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vipformer/data.hpp"
#include "vipformer/model.hpp"

namespace vip {

struct ProbeOptions {
    int iters = 400;
    double lr = 0.5;
    double weight_decay = 1e-4;
    bool hinge = false;  // one-vs-rest squared hinge instead of softmax CE
};

// Trains a linear classifier on the train rows of `features` (row-major
// S x dim) and returns accuracy over the test rows. Features are whitened
// with train-split statistics first, which keeps the probe insensitive to
// affine re-parameterizations of the embedding space.
double linear_probe(const std::vector<double>& features, std::size_t dim, const std::vector<int>& labels,
                    const std::vector<std::size_t>& train_rows, const std::vector<std::size_t>& test_rows,
                    int num_classes, const ProbeOptions& opt = {});

struct FewShotSpec {
    int n_way = 5;
    int k_shot = 10;
    int runs = 10;
    int query_per_class = 20;

    void validate() const {
        if (n_way < 2) throw ParamError("fewshot: need at least 2 ways");
        if (k_shot < 1 || runs < 1 || query_per_class < 1)
            throw ParamError("fewshot: shots, runs and queries must be >= 1");
    }
};

struct FewShotResult {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> run_accuracies;
};

// Random episodes over precomputed embeddings: per run, sample n_way classes
// and k_shot + query_per_class rows per class, probe, score. Mean and sample
// standard deviation over runs.
FewShotResult fewshot_episodes(const std::vector<double>& features, std::size_t dim, const std::vector<int>& labels,
                               const FewShotSpec& spec, RngStream rng, const ProbeOptions& opt = {});

// One adapted feature row per requested sample, in request order. Eval mode
// (no dropout, BatchNorm running statistics); point subsampling and FPS
// seeds derive from (eval_seed, dataset index) so repeated extractions are
// identical.
template <typename Real>
void extract_embeddings(ModelWeights<Real>& w, const LoadedDataset<Real>& dataset,
                        const std::vector<std::size_t>& indices, std::uint64_t eval_seed,
                        std::vector<double>& features_out, std::vector<int>& labels_out) {
    NoGradGuard ng;
    const std::size_t g = static_cast<std::size_t>(w.cfg.point_tokens);
    const std::size_t k = static_cast<std::size_t>(w.cfg.neighbors);
    const std::size_t c2 = static_cast<std::size_t>(w.cfg.point_channels);
    const std::size_t out_dim = static_cast<std::size_t>(w.cfg.resolved_out_dim());
    const std::size_t max_pts = static_cast<std::size_t>(w.cfg.eval_points);
    const RngStream base = RngStream(eval_seed).fork(RngPurpose::Eval);

    features_out.assign(indices.size() * out_dim, 0.0);
    labels_out.assign(indices.size(), 0);

    const std::size_t chunk = 32;
    for (std::size_t start = 0; start < indices.size(); start += chunk) {
        const std::size_t b = std::min(chunk, indices.size() - start);
        auto patches = Tensor<Real>::zeros({b, g, k * c2});
        auto centers = Tensor<Real>::zeros({b, g, c2});
        std::exception_ptr failure = nullptr;
#pragma omp parallel for schedule(dynamic)
        for (std::size_t j = 0; j < b; ++j) {
            try {
                const std::size_t idx = indices[start + j];
                RngStream srng = base.fork(idx);
                auto cloud = dataset.points(idx, max_pts, srng.fork(1));
                RngStream fps_rng = srng.fork(2);
                auto seq = build_point_patches(cloud, g, k, fps_rng);
                std::copy(seq.patches.data(), seq.patches.data() + seq.patches.size(),
                          patches.data() + j * g * k * c2);
                std::copy(seq.centers.data(), seq.centers.data() + seq.centers.size(),
                          centers.data() + j * g * c2);
            } catch (...) {
#pragma omp critical
                if (!failure) failure = std::current_exception();
            }
        }
        if (failure) std::rethrow_exception(failure);
        auto feats = point_branch_features(patches, centers, w, /*train=*/false, /*dropout_seed=*/0);
        for (std::size_t j = 0; j < b; ++j) {
            labels_out[start + j] = dataset.entry(indices[start + j]).class_id;
            for (std::size_t d = 0; d < out_dim; ++d)
                features_out[(start + j) * out_dim + d] = static_cast<double>(feats.data()[j * out_dim + d]);
        }
    }
}

}  // namespace vip
