// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0
//
// Serialization of raw images and point clouds into encoder token
// sequences: non-overlapping image patches, and farthest-point-sampled
// centers with k-nearest-neighbor groups for point clouds.

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "vipformer/rng.hpp"
#include "vipformer/tensor.hpp"

namespace vip {

template <typename Real>
struct ImagePatchSequence {
    Tensor<Real> patches;  // [M, Q*Q*C], row-major over the patch grid
    std::size_t height = 0, width = 0, channels = 0, patch = 0;

    std::size_t count() const { return (height / patch) * (width / patch); }
};

template <typename Real>
struct PointPatchSequence {
    Tensor<Real> patches;  // [G, k*C], neighbor coordinates relative to the center
    Tensor<Real> centers;  // [G, C]
    std::size_t groups = 0, neighbors = 0, channels = 0;
};

// Splits image [H, W, C] into Q x Q patches, flattened row-major (dy, dx,
// channel), patch order row-major over the patch grid.
template <typename Real>
ImagePatchSequence<Real> patchify_image(const Tensor<Real>& image, std::size_t q) {
    if (image.rank() != 3) throw ShapeError("patchify_image: expected [H, W, C], got " + shape_str(image.shape()));
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (q == 0 || h % q != 0 || w % q != 0)
        throw ShapeError("patchify_image: patch size " + std::to_string(q) + " does not divide " +
                         std::to_string(h) + "x" + std::to_string(w));
    const std::size_t ph = h / q, pw = w / q, row_len = q * q * c;
    auto out = Tensor<Real>::zeros({ph * pw, row_len});
    const Real* src = image.data();
    for (std::size_t pr = 0; pr < ph; ++pr)
        for (std::size_t pc = 0; pc < pw; ++pc) {
            Real* dst = out.data() + (pr * pw + pc) * row_len;
            for (std::size_t dy = 0; dy < q; ++dy)
                for (std::size_t dx = 0; dx < q; ++dx)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        *dst++ = src[((pr * q + dy) * w + (pc * q + dx)) * c + ch];
        }
    return ImagePatchSequence<Real>{std::move(out), h, w, c, q};
}

// Exact inverse of patchify_image.
template <typename Real>
Tensor<Real> unpatchify_image(const ImagePatchSequence<Real>& seq) {
    const std::size_t h = seq.height, w = seq.width, c = seq.channels, q = seq.patch;
    const std::size_t pw = w / q, row_len = q * q * c;
    auto out = Tensor<Real>::zeros({h, w, c});
    for (std::size_t m = 0; m < seq.count(); ++m) {
        const std::size_t pr = m / pw, pc = m % pw;
        const Real* src = seq.patches.data() + m * row_len;
        for (std::size_t dy = 0; dy < q; ++dy)
            for (std::size_t dx = 0; dx < q; ++dx)
                for (std::size_t ch = 0; ch < c; ++ch)
                    out.data()[((pr * q + dy) * w + (pc * q + dx)) * c + ch] = *src++;
    }
    return out;
}

namespace detail {

template <typename Real>
Real sq_dist(const Real* a, const Real* b, std::size_t c) {
    Real acc = 0;
    for (std::size_t i = 0; i < c; ++i) {
        const Real d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace detail

// Greedy farthest point sampling. The first index is drawn uniformly from
// `rng`; every following pick maximizes the minimum squared distance to the
// already selected set, ties resolved to the lowest index.
template <typename Real>
std::vector<std::size_t> farthest_point_sample(const Tensor<Real>& points, std::size_t g, RngStream& rng) {
    if (points.rank() != 2) throw ShapeError("farthest_point_sample: expected [N, C], got " + shape_str(points.shape()));
    const std::size_t n = points.dim(0), c = points.dim(1);
    if (g < 1) throw ParamError("farthest_point_sample: need at least one center");
    if (g > n) throw ParamError("farthest_point_sample: requested " + std::to_string(g) + " centers from " +
                                std::to_string(n) + " points");
    std::vector<std::size_t> selected;
    selected.reserve(g);
    std::vector<Real> min_dist(n, std::numeric_limits<Real>::max());
    std::size_t current = rng.uniform_index(n);
    selected.push_back(current);
    for (std::size_t s = 1; s < g; ++s) {
        const Real* ref = points.data() + current * c;
        std::size_t best = 0;
        Real best_dist = -1;
        for (std::size_t i = 0; i < n; ++i) {
            const Real d = detail::sq_dist(points.data() + i * c, ref, c);
            if (d < min_dist[i]) min_dist[i] = d;
            if (min_dist[i] > best_dist) {
                best_dist = min_dist[i];
                best = i;
            }
        }
        current = best;
        selected.push_back(current);
    }
    return selected;
}

// For each center, the k nearest cloud points, ascending by squared
// Euclidean distance, ties resolved to the lowest index.
template <typename Real>
std::vector<std::vector<std::size_t>> knn_group(const Tensor<Real>& points, const Tensor<Real>& centers,
                                                std::size_t k) {
    if (points.rank() != 2 || centers.rank() != 2 || points.dim(1) != centers.dim(1))
        throw ShapeError("knn_group: incompatible shapes " + shape_str(points.shape()) + " vs " +
                         shape_str(centers.shape()));
    const std::size_t n = points.dim(0), c = points.dim(1), g = centers.dim(0);
    if (k < 1) throw ParamError("knn_group: k must be positive");
    if (k > n) throw ParamError("knn_group: requested " + std::to_string(k) + " neighbors from " +
                                std::to_string(n) + " points");
    std::vector<std::vector<std::size_t>> result(g);
    std::vector<std::pair<Real, std::size_t>> dist(n);
    for (std::size_t gi = 0; gi < g; ++gi) {
        const Real* ctr = centers.data() + gi * c;
        for (std::size_t i = 0; i < n; ++i) dist[i] = {detail::sq_dist(points.data() + i * c, ctr, c), i};
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
        result[gi].resize(k);
        for (std::size_t j = 0; j < k; ++j) result[gi][j] = dist[j].second;
    }
    return result;
}

// FPS centers, then kNN groups with neighbor coordinates expressed relative
// to their center and flattened. Centers ride along for position encoding.
template <typename Real>
PointPatchSequence<Real> build_point_patches(const Tensor<Real>& points, std::size_t g, std::size_t k,
                                             RngStream& rng) {
    const std::size_t c = points.dim(1);
    auto center_idx = farthest_point_sample(points, g, rng);
    auto centers = Tensor<Real>::zeros({g, c});
    for (std::size_t gi = 0; gi < g; ++gi)
        for (std::size_t ci = 0; ci < c; ++ci) centers.data()[gi * c + ci] = points.data()[center_idx[gi] * c + ci];
    auto groups = knn_group(points, centers, k);
    auto patches = Tensor<Real>::zeros({g, k * c});
    for (std::size_t gi = 0; gi < g; ++gi) {
        Real* row = patches.data() + gi * k * c;
        const Real* ctr = centers.data() + gi * c;
        for (std::size_t j = 0; j < k; ++j) {
            const Real* p = points.data() + groups[gi][j] * c;
            for (std::size_t ci = 0; ci < c; ++ci) row[j * c + ci] = p[ci] - ctr[ci];
        }
    }
    return PointPatchSequence<Real>{std::move(patches), std::move(centers), g, k, c};
}

}  // namespace vip
