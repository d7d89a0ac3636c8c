// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0
//
// Stochastic point cloud transformations producing the two training views
// for intra-modal contrast. Each sub-transform draws from its own rng
// substream so toggling one never shifts another.

#pragma once

#include <array>
#include <cmath>

#include "vipformer/rng.hpp"
#include "vipformer/tensor.hpp"

namespace vip {

struct AugmentationSpec {
    enum class RotationAxis { UpAxis, Arbitrary };

    RotationAxis rotation_axis = RotationAxis::UpAxis;
    double rotation_min = 0.0;
    double rotation_max = 6.283185307179586476925286766559;  // [0, 2pi)
    double translation_min = -0.2;
    double translation_max = 0.2;
    double jitter_sigma = 0.01;
    double jitter_clip = 0.05;
    double scale_min = 0.8;
    double scale_max = 1.2;

    static AugmentationSpec identity() {
        AugmentationSpec s;
        s.rotation_min = s.rotation_max = 0.0;
        s.translation_min = s.translation_max = 0.0;
        s.jitter_sigma = s.jitter_clip = 0.0;
        s.scale_min = s.scale_max = 1.0;
        return s;
    }

    void validate() const {
        if (scale_min <= 0 || scale_max <= 0 || scale_min > scale_max)
            throw ParamError("augmentation: scale range must be positive and ordered");
        if (rotation_min > rotation_max) throw ParamError("augmentation: rotation range reversed");
        if (translation_min > translation_max) throw ParamError("augmentation: translation range reversed");
        if (jitter_sigma < 0 || jitter_clip < 0) throw ParamError("augmentation: jitter parameters must be >= 0");
    }
};

namespace detail {

// Substream tags inside one augmentation application.
enum : std::uint64_t { kScaleSub = 1, kRotateSub = 2, kTranslateSub = 3, kJitterSub = 4 };

inline std::array<std::array<double, 3>, 3> rotation_matrix(const AugmentationSpec& spec, RngStream rng) {
    const double angle = rng.uniform(spec.rotation_min, spec.rotation_max);
    double ax = 0, ay = 0, az = 1;  // up axis is +z
    if (spec.rotation_axis == AugmentationSpec::RotationAxis::Arbitrary) {
        double norm = 0;
        do {
            ax = rng.normal();
            ay = rng.normal();
            az = rng.normal();
            norm = std::sqrt(ax * ax + ay * ay + az * az);
        } while (norm < 1e-12);
        ax /= norm;
        ay /= norm;
        az /= norm;
    }
    const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    return {{{c + ax * ax * t, ax * ay * t - az * s, ax * az * t + ay * s},
             {ay * ax * t + az * s, c + ay * ay * t, ay * az * t - ax * s},
             {az * ax * t - ay * s, az * ay * t + ax * s, c + az * az * t}}};
}

}  // namespace detail

// Applies, in order: uniform scale, rotation, translation, clipped Gaussian
// jitter. Pure function of (points, spec, rng seed).
template <typename Real>
Tensor<Real> apply_augmentation(const Tensor<Real>& points, const AugmentationSpec& spec, const RngStream& rng) {
    spec.validate();
    if (points.rank() != 2 || points.dim(1) != 3)
        throw ShapeError("apply_augmentation: expected [N, 3], got " + shape_str(points.shape()));
    const std::size_t n = points.dim(0);

    const double s = rng.fork(detail::kScaleSub).uniform(spec.scale_min, spec.scale_max);
    const auto rot = detail::rotation_matrix(spec, rng.fork(detail::kRotateSub));
    RngStream trng = rng.fork(detail::kTranslateSub);
    const double tx = trng.uniform(spec.translation_min, spec.translation_max);
    const double ty = trng.uniform(spec.translation_min, spec.translation_max);
    const double tz = trng.uniform(spec.translation_min, spec.translation_max);
    const RngStream jbase = rng.fork(detail::kJitterSub);

    auto out = Tensor<Real>::zeros({n, 3});
    for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(points.data()[i * 3 + 0]) * s;
        const double y = static_cast<double>(points.data()[i * 3 + 1]) * s;
        const double z = static_cast<double>(points.data()[i * 3 + 2]) * s;
        double px = rot[0][0] * x + rot[0][1] * y + rot[0][2] * z + tx;
        double py = rot[1][0] * x + rot[1][1] * y + rot[1][2] * z + ty;
        double pz = rot[2][0] * x + rot[2][1] * y + rot[2][2] * z + tz;
        if (spec.jitter_sigma > 0) {
            RngStream jrng = jbase.fork(i);
            const double clip = spec.jitter_clip;
            px += std::clamp(jrng.normal() * spec.jitter_sigma, -clip, clip);
            py += std::clamp(jrng.normal() * spec.jitter_sigma, -clip, clip);
            pz += std::clamp(jrng.normal() * spec.jitter_sigma, -clip, clip);
        }
        out.data()[i * 3 + 0] = static_cast<Real>(px);
        out.data()[i * 3 + 1] = static_cast<Real>(py);
        out.data()[i * 3 + 2] = static_cast<Real>(pz);
    }
    return out;
}

// Two independent augmentation draws from disjoint substreams.
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> two_views(const Tensor<Real>& points, const AugmentationSpec& spec,
                                                const RngStream& rng) {
    return {apply_augmentation(points, spec, rng.fork(1)), apply_augmentation(points, spec, rng.fork(2))};
}

}  // namespace vip
