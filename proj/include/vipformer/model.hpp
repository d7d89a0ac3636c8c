// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0
//
// The network: modality-specific input adapters, a shared pre-LN
// transformer encoder, max+mean pooling, a shared nonlinear output adapter
// for the contrastive space, and an optional classification head for
// finetuning. Image and point branches run the very same encoder and
// output adapter weights.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vipformer/augment.hpp"
#include "vipformer/rng.hpp"
#include "vipformer/tensor.hpp"
#include "vipformer/tokenize.hpp"

namespace vip {

struct ViPFormerConfig {
    int layers = 9;         // encoder depth L
    int heads = 6;          // attention heads per MSA layer
    int dim = 384;          // model width D
    int mlp_ratio = 4;      // encoder MLP widening factor
    int point_tokens = 128; // centers per cloud (G)
    int neighbors = 32;     // neighbors per center (k)
    int patch = 12;         // image patch size Q
    int image_size = 144;   // square input images
    int image_channels = 3;
    int point_channels = 3;
    int pretrain_points = 2048;
    int eval_points = 1024;
    int adapter_hidden = 128;  // hidden width of the point/center MLP adapters
    double dropout = 0.1;
    int out_dim = 0;  // 0 means "same as dim"

    int resolved_out_dim() const { return out_dim > 0 ? out_dim : dim; }
    int image_tokens() const { return (image_size / patch) * (image_size / patch); }
    int image_patch_len() const { return patch * patch * image_channels; }
    int point_patch_len() const { return neighbors * point_channels; }

    void validate() const {
        if (layers < 0) throw ParamError("config: layers must be >= 0");
        if (heads < 1 || dim < 1 || dim % heads != 0)
            throw ParamError("config: dim " + std::to_string(dim) + " must be divisible by heads " +
                             std::to_string(heads));
        if (mlp_ratio < 1) throw ParamError("config: mlp_ratio must be >= 1");
        if (point_tokens < 1 || neighbors < 1) throw ParamError("config: point tokens and neighbors must be >= 1");
        if (patch < 1 || image_size % patch != 0)
            throw ParamError("config: patch size " + std::to_string(patch) + " must divide image size " +
                             std::to_string(image_size));
        if (dropout < 0.0 || dropout >= 1.0) throw ParamError("config: dropout must be in [0, 1)");
        if (adapter_hidden < 1) throw ParamError("config: adapter_hidden must be >= 1");
    }
};

template <typename Real>
struct EncoderLayerWeights {
    Tensor<Real> ln1_gamma, ln1_beta;
    Tensor<Real> qkv_w, qkv_b;    // [D, 3D], [3D]
    Tensor<Real> proj_w, proj_b;  // [D, D], [D]
    Tensor<Real> ln2_gamma, ln2_beta;
    Tensor<Real> fc1_w, fc1_b;  // [D, ratio*D]
    Tensor<Real> fc2_w, fc2_b;  // [ratio*D, D]
};

template <typename Real>
struct ModelWeights {
    ViPFormerConfig cfg;

    Tensor<Real> image_w, image_b;  // linear adapter [Q^2*C1, D]
    Tensor<Real> image_pos;         // learned table [M, D]
    Tensor<Real> point_w1, point_b1, point_w2, point_b2;  // patch MLP k*C2 -> hidden -> D
    Tensor<Real> pos_w1, pos_b1, pos_w2, pos_b2;          // center MLP C2 -> hidden -> D

    std::vector<EncoderLayerWeights<Real>> layers;

    Tensor<Real> oa_bn1_gamma, oa_bn1_beta;
    BatchNormState<Real> oa_bn1;
    Tensor<Real> oa_w1, oa_b1;  // [2D, D]
    Tensor<Real> oa_bn2_gamma, oa_bn2_beta;
    BatchNormState<Real> oa_bn2;
    Tensor<Real> oa_w2, oa_b2;  // [D, out_dim]

    bool has_head = false;
    int head_classes = 0;
    Tensor<Real> head_w1, head_b1, head_w2, head_b2;  // [2D, D], [D, classes]

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        fn("image_adapter.w", image_w);
        fn("image_adapter.b", image_b);
        fn("image_pos", image_pos);
        fn("point_adapter.w1", point_w1);
        fn("point_adapter.b1", point_b1);
        fn("point_adapter.w2", point_w2);
        fn("point_adapter.b2", point_b2);
        fn("point_pos.w1", pos_w1);
        fn("point_pos.b1", pos_b1);
        fn("point_pos.w2", pos_w2);
        fn("point_pos.b2", pos_b2);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "encoder." + std::to_string(l) + ".";
            auto& lw = layers[l];
            fn(p + "ln1.gamma", lw.ln1_gamma);
            fn(p + "ln1.beta", lw.ln1_beta);
            fn(p + "qkv.w", lw.qkv_w);
            fn(p + "qkv.b", lw.qkv_b);
            fn(p + "proj.w", lw.proj_w);
            fn(p + "proj.b", lw.proj_b);
            fn(p + "ln2.gamma", lw.ln2_gamma);
            fn(p + "ln2.beta", lw.ln2_beta);
            fn(p + "fc1.w", lw.fc1_w);
            fn(p + "fc1.b", lw.fc1_b);
            fn(p + "fc2.w", lw.fc2_w);
            fn(p + "fc2.b", lw.fc2_b);
        }
        fn("output_adapter.bn1.gamma", oa_bn1_gamma);
        fn("output_adapter.bn1.beta", oa_bn1_beta);
        fn("output_adapter.w1", oa_w1);
        fn("output_adapter.b1", oa_b1);
        fn("output_adapter.bn2.gamma", oa_bn2_gamma);
        fn("output_adapter.bn2.beta", oa_bn2_beta);
        fn("output_adapter.w2", oa_w2);
        fn("output_adapter.b2", oa_b2);
        if (has_head) {
            fn("head.w1", head_w1);
            fn("head.b1", head_b1);
            fn("head.w2", head_w2);
            fn("head.b2", head_b2);
        }
    }

    template <typename Fn>
    void for_each_buffer(Fn&& fn) {
        fn("output_adapter.bn1.running_mean", oa_bn1.running_mean);
        fn("output_adapter.bn1.running_var", oa_bn1.running_var);
        fn("output_adapter.bn2.running_mean", oa_bn2.running_mean);
        fn("output_adapter.bn2.running_var", oa_bn2.running_var);
    }

    void set_requires_grad(bool encoder_and_adapters, bool head) {
        for_each_param([&](const std::string& name, Tensor<Real>& t) {
            const bool is_head = name.rfind("head.", 0) == 0;
            t.set_requires_grad(is_head ? head : encoder_and_adapters);
        });
    }
};

namespace detail {

template <typename Real>
Tensor<Real> trunc_normal_tensor(Shape shape, RngStream& rng, double sigma = 0.02) {
    auto t = Tensor<Real>::zeros(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Real>(rng.truncated_normal(sigma));
    return t;
}

}  // namespace detail

// Truncated-normal (sigma 0.02) linear weights, zero biases, unit/zero norm
// affines. One sequential stream in declaration order keeps init reproducible.
template <typename Real>
ModelWeights<Real> init_weights(const ViPFormerConfig& cfg, const RngStream& seed_stream) {
    cfg.validate();
    RngStream rng = seed_stream.fork(RngPurpose::Init);
    ModelWeights<Real> w;
    w.cfg = cfg;
    const std::size_t d = static_cast<std::size_t>(cfg.dim);
    const std::size_t hidden = static_cast<std::size_t>(cfg.adapter_hidden);
    const std::size_t m = static_cast<std::size_t>(cfg.image_tokens());
    const std::size_t img_in = static_cast<std::size_t>(cfg.image_patch_len());
    const std::size_t pt_in = static_cast<std::size_t>(cfg.point_patch_len());
    const std::size_t c2 = static_cast<std::size_t>(cfg.point_channels);
    const std::size_t ff = d * static_cast<std::size_t>(cfg.mlp_ratio);
    const std::size_t out = static_cast<std::size_t>(cfg.resolved_out_dim());

    w.image_w = detail::trunc_normal_tensor<Real>({img_in, d}, rng);
    w.image_b = Tensor<Real>::zeros({d});
    w.image_pos = detail::trunc_normal_tensor<Real>({m, d}, rng);
    w.point_w1 = detail::trunc_normal_tensor<Real>({pt_in, hidden}, rng);
    w.point_b1 = Tensor<Real>::zeros({hidden});
    w.point_w2 = detail::trunc_normal_tensor<Real>({hidden, d}, rng);
    w.point_b2 = Tensor<Real>::zeros({d});
    w.pos_w1 = detail::trunc_normal_tensor<Real>({c2, hidden}, rng);
    w.pos_b1 = Tensor<Real>::zeros({hidden});
    w.pos_w2 = detail::trunc_normal_tensor<Real>({hidden, d}, rng);
    w.pos_b2 = Tensor<Real>::zeros({d});

    w.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& lw : w.layers) {
        lw.ln1_gamma = Tensor<Real>::filled({d}, Real(1));
        lw.ln1_beta = Tensor<Real>::zeros({d});
        lw.qkv_w = detail::trunc_normal_tensor<Real>({d, 3 * d}, rng);
        lw.qkv_b = Tensor<Real>::zeros({3 * d});
        lw.proj_w = detail::trunc_normal_tensor<Real>({d, d}, rng);
        lw.proj_b = Tensor<Real>::zeros({d});
        lw.ln2_gamma = Tensor<Real>::filled({d}, Real(1));
        lw.ln2_beta = Tensor<Real>::zeros({d});
        lw.fc1_w = detail::trunc_normal_tensor<Real>({d, ff}, rng);
        lw.fc1_b = Tensor<Real>::zeros({ff});
        lw.fc2_w = detail::trunc_normal_tensor<Real>({ff, d}, rng);
        lw.fc2_b = Tensor<Real>::zeros({d});
    }

    w.oa_bn1_gamma = Tensor<Real>::filled({2 * d}, Real(1));
    w.oa_bn1_beta = Tensor<Real>::zeros({2 * d});
    w.oa_w1 = detail::trunc_normal_tensor<Real>({2 * d, d}, rng);
    w.oa_b1 = Tensor<Real>::zeros({d});
    w.oa_bn2_gamma = Tensor<Real>::filled({d}, Real(1));
    w.oa_bn2_beta = Tensor<Real>::zeros({d});
    w.oa_w2 = detail::trunc_normal_tensor<Real>({d, out}, rng);
    w.oa_b2 = Tensor<Real>::zeros({out});

    w.set_requires_grad(true, false);
    return w;
}

template <typename Real>
void init_head(ModelWeights<Real>& w, int classes, const RngStream& seed_stream) {
    if (classes < 1) throw ParamError("init_head: need at least one class");
    RngStream rng = seed_stream.fork(RngPurpose::Head);
    const std::size_t d = static_cast<std::size_t>(w.cfg.dim);
    w.head_w1 = detail::trunc_normal_tensor<Real>({2 * d, d}, rng);
    w.head_b1 = Tensor<Real>::zeros({d});
    w.head_w2 = detail::trunc_normal_tensor<Real>({d, static_cast<std::size_t>(classes)}, rng);
    w.head_b2 = Tensor<Real>::zeros({static_cast<std::size_t>(classes)});
    w.has_head = true;
    w.head_classes = classes;
    w.head_w1.set_requires_grad(true);
    w.head_b1.set_requires_grad(true);
    w.head_w2.set_requires_grad(true);
    w.head_b2.set_requires_grad(true);
}

// ---------------------------------------------------------------------------
// Forward passes. All accept [tokens, feat] or [batch, tokens, feat].
// ---------------------------------------------------------------------------

// z_i = x_i E_I + E_I^pos
template <typename Real>
Tensor<Real> embed_image(const Tensor<Real>& patches, const ModelWeights<Real>& w) {
    if (patches.dim(patches.rank() - 2) != static_cast<std::size_t>(w.cfg.image_tokens()))
        throw ShapeError("embed_image: expected " + std::to_string(w.cfg.image_tokens()) + " tokens, got " +
                         shape_str(patches.shape()));
    return add(linear(patches, w.image_w, w.image_b), w.image_pos);
}

// z_p = MLP(x_p) + PosMLP(centers), row-aligned.
template <typename Real>
Tensor<Real> embed_points(const Tensor<Real>& patches, const Tensor<Real>& centers, const ModelWeights<Real>& w) {
    auto tok = linear(gelu(linear(patches, w.point_w1, w.point_b1)), w.point_w2, w.point_b2);
    auto pos = linear(gelu(linear(centers, w.pos_w1, w.pos_b1)), w.pos_w2, w.pos_b2);
    return add(tok, pos);
}

// Pre-LN encoder stack: z_hat = Dropout(MSA(LN(z))) + z, then
// z = Dropout(MLP(LN(z_hat))) + z_hat, repeated L times.
template <typename Real>
Tensor<Real> encoder_forward(Tensor<Real> z, const ModelWeights<Real>& w, bool train, std::uint64_t dropout_seed,
                             AttentionProbe* probe = nullptr) {
    const Real eps = Real(1e-5);
    const double rate = w.cfg.dropout;
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const auto& lw = w.layers[l];
        auto h = layer_norm(z, lw.ln1_gamma, lw.ln1_beta, eps);
        auto qkv = linear(h, lw.qkv_w, lw.qkv_b);
        auto ctx = attention(qkv, static_cast<std::size_t>(w.cfg.heads), probe);
        auto msa = linear(ctx, lw.proj_w, lw.proj_b);
        auto zhat = add(dropout(msa, rate, mix64(dropout_seed, 2 * l), train), z);
        auto h2 = layer_norm(zhat, lw.ln2_gamma, lw.ln2_beta, eps);
        auto ff = linear(gelu(linear(h2, lw.fc1_w, lw.fc1_b)), lw.fc2_w, lw.fc2_b);
        z = add(dropout(ff, rate, mix64(dropout_seed, 2 * l + 1), train), zhat);
    }
    return z;
}

// r = [max ; mean] over tokens.
template <typename Real>
Tensor<Real> pool(const Tensor<Real>& z) {
    return pool_max_mean(z);
}

// o = Linear(ReLU(BN(Linear(ReLU(BN(r)))))) with widths {2D, D, out_dim}.
template <typename Real>
Tensor<Real> output_adapter_forward(const Tensor<Real>& r, ModelWeights<Real>& w, bool train) {
    auto x = relu(batch_norm(r, w.oa_bn1_gamma, w.oa_bn1_beta, w.oa_bn1, train));
    x = linear(x, w.oa_w1, w.oa_b1);
    x = relu(batch_norm(x, w.oa_bn2_gamma, w.oa_bn2_beta, w.oa_bn2, train));
    return linear(x, w.oa_w2, w.oa_b2);
}

// Classification head on the pooled feature; the contrastive output adapter
// is bypassed. logits = Linear(Dropout(ReLU(Linear(r)))).
template <typename Real>
Tensor<Real> classify_forward(const Tensor<Real>& pooled, const ModelWeights<Real>& w, bool train,
                              std::uint64_t dropout_seed) {
    if (!w.has_head) throw ContractError("classify_forward: classifier head not initialized");
    auto x = relu(linear(pooled, w.head_w1, w.head_b1));
    x = dropout(x, w.cfg.dropout, dropout_seed, train);
    return linear(x, w.head_w2, w.head_b2);
}

// Batched branch pipelines. Point inputs arrive pre-tokenized so the caller
// controls sampling rng; shapes are [B, G, k*C2] + [B, G, C2] and
// [B, M, Q^2*C1].
template <typename Real>
Tensor<Real> point_branch_pooled(const Tensor<Real>& patches, const Tensor<Real>& centers, ModelWeights<Real>& w,
                                 bool train, std::uint64_t dropout_seed, AttentionProbe* probe = nullptr) {
    auto z = embed_points(patches, centers, w);
    z = encoder_forward(z, w, train, mix64(dropout_seed, 0x70), probe);
    return pool(z);
}

template <typename Real>
Tensor<Real> point_branch_features(const Tensor<Real>& patches, const Tensor<Real>& centers, ModelWeights<Real>& w,
                                   bool train, std::uint64_t dropout_seed, AttentionProbe* probe = nullptr) {
    return output_adapter_forward(point_branch_pooled(patches, centers, w, train, dropout_seed, probe), w, train);
}

template <typename Real>
Tensor<Real> image_branch_features(const Tensor<Real>& patches, ModelWeights<Real>& w, bool train,
                                   std::uint64_t dropout_seed, AttentionProbe* probe = nullptr) {
    auto z = embed_image(patches, w);
    z = encoder_forward(z, w, train, mix64(dropout_seed, 0x71), probe);
    return output_adapter_forward(pool(z), w, train);
}

// Single-sample conveniences over the batched pipelines.
template <typename Real>
Tensor<Real> forward_points(const Tensor<Real>& cloud, ModelWeights<Real>& w, bool train, RngStream sampling_rng,
                            std::uint64_t dropout_seed = 0) {
    auto seq = build_point_patches(cloud, static_cast<std::size_t>(w.cfg.point_tokens),
                                   static_cast<std::size_t>(w.cfg.neighbors), sampling_rng);
    auto patches = seq.patches.reshaped({1, seq.groups, seq.neighbors * seq.channels});
    auto centers = seq.centers.reshaped({1, seq.groups, seq.channels});
    auto f = point_branch_features(patches, centers, w, train, dropout_seed);
    return f.reshaped({f.size()});
}

template <typename Real>
Tensor<Real> forward_image(const Tensor<Real>& image, ModelWeights<Real>& w, bool train,
                           std::uint64_t dropout_seed = 0) {
    auto seq = patchify_image(image, static_cast<std::size_t>(w.cfg.patch));
    auto patches = seq.patches.reshaped({1, seq.count(), seq.patches.dim(1)});
    auto f = image_branch_features(patches, w, train, dropout_seed);
    return f.reshaped({f.size()});
}

// Exact learnable-scalar count of the pretraining model (adapters, position
// encodings, encoder, output adapter; classifier head excluded). Closed-form
// from the config; the test suite cross-checks it by enumerating an
// instantiated ModelWeights.
inline long long count_parameters(const ViPFormerConfig& cfg) {
    cfg.validate();
    const long long d = cfg.dim;
    const long long hidden = cfg.adapter_hidden;
    const long long m = cfg.image_tokens();
    const long long img_in = cfg.image_patch_len();
    const long long pt_in = cfg.point_patch_len();
    const long long c2 = cfg.point_channels;
    const long long ff = d * cfg.mlp_ratio;
    const long long out = cfg.resolved_out_dim();

    const long long image_adapter = img_in * d + d + m * d;
    const long long point_adapter = pt_in * hidden + hidden + hidden * d + d;
    const long long point_pos = c2 * hidden + hidden + hidden * d + d;
    const long long per_layer = 2 * d            // ln1
                                + d * 3 * d + 3 * d  // qkv
                                + d * d + d          // proj
                                + 2 * d              // ln2
                                + d * ff + ff        // fc1
                                + ff * d + d;        // fc2
    const long long output_adapter = 2 * (2 * d)   // bn1 affine
                                     + 2 * d * d + d    // linear 2D -> D
                                     + 2 * d            // bn2 affine
                                     + d * out + out;   // linear D -> out
    return image_adapter + point_adapter + point_pos + cfg.layers * per_layer + output_adapter;
}

}  // namespace vip
