// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0
//
// Desk-scale paired data. A procedural generator emits (point cloud,
// orthographic silhouette render) pairs for eight shape families, plus
// loaders for the two point formats, binary PPM images, and the JSON
// dataset manifest.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vipformer/rng.hpp"
#include "vipformer/tensor.hpp"

namespace vip {

// --------------------------------------------------------------------------
// Procedural shapes
// --------------------------------------------------------------------------

enum class ShapeFamily : int { Sphere = 0, Cube, Cylinder, Cone, Torus, Pyramid, Capsule, Cross };

constexpr int kShapeFamilyCount = 8;

const char* shape_family_name(ShapeFamily f);
ShapeFamily shape_family_from_index(int i);

// A concrete shape: family plus its per-sample proportions (meaning depends
// on the family; see data.cpp).
struct ShapeSpec {
    ShapeFamily family = ShapeFamily::Sphere;
    double p0 = 1.0, p1 = 1.0, p2 = 1.0;
};

ShapeSpec make_shape_spec(ShapeFamily family, RngStream& rng);

// Uniform-ish surface samples in the shape's local frame.
std::vector<std::array<double, 3>> sample_surface_points(const ShapeSpec& spec, std::size_t n, RngStream& rng);

// Signed distance in the local frame (exact or a conservative underestimate
// outside, correct sign everywhere).
double shape_sdf(const ShapeSpec& spec, double x, double y, double z);

// --------------------------------------------------------------------------
// Orthographic silhouette renderer
// --------------------------------------------------------------------------

// The image maps the square [-kViewHalfExtent, kViewHalfExtent]^2 of the
// normalized model space; rays run horizontally toward the origin at the
// given azimuth about the +z up axis. Foreground pixels are shaded by depth
// along the ray (near bright, far dim, in [0.45, 0.95]); background is 0.
inline constexpr double kViewHalfExtent = 1.3;
inline constexpr double kShadeNear = 0.95;
inline constexpr double kShadeFar = 0.45;

// `center`/`scale` place the local shape into normalized space:
// world = (local - center) / scale. Returns size*size grayscale bytes.
std::vector<std::uint8_t> render_silhouette(const ShapeSpec& spec, const std::array<double, 3>& center,
                                            double scale, double azimuth, int size);

// --------------------------------------------------------------------------
// File formats
// --------------------------------------------------------------------------

// Point files: either text ("x y z" per line) or binary ("VPTS" magic,
// little-endian u32 count, count * 3 little-endian f32).
std::vector<std::array<float, 3>> read_points_file(const std::filesystem::path& path);
void write_points_binary(const std::filesystem::path& path, const std::vector<std::array<float, 3>>& pts);
void write_points_text(const std::filesystem::path& path, const std::vector<std::array<float, 3>>& pts);

struct PpmImage {
    int width = 0, height = 0;
    std::vector<std::uint8_t> rgb;  // 3 bytes per pixel, row-major
};

PpmImage read_ppm(const std::filesystem::path& path);
void write_ppm_gray(const std::filesystem::path& path, int size, const std::vector<std::uint8_t>& gray);

// Center at the centroid and scale so the farthest point sits on the unit
// sphere. Already-normalized inputs (within 1e-6) pass through untouched, so
// the loader is a fixed point of itself.
void normalize_cloud(std::vector<std::array<float, 3>>& pts);

// --------------------------------------------------------------------------
// Dataset manifest
// --------------------------------------------------------------------------

struct ManifestEntry {
    std::string id;
    int class_id = 0;
    std::string split;        // train | val | test
    std::string points_file;  // relative to the dataset root
    std::vector<std::string> image_files;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<std::string> class_names;
    int image_size = 0;
    int points_per_cloud = 0;
    int views = 0;
    std::vector<ManifestEntry> entries;

    std::vector<std::size_t> split_indices(const std::string& split) const;
    void save() const;  // writes <root>/manifest.json
    static DatasetManifest load(const std::filesystem::path& root);
};

struct GenerateOptions {
    int class_count = 8;
    int per_class = 64;
    int n_points = 2048;
    int image_size = 144;
    int views = 4;
    std::uint64_t seed = 0;
};

DatasetManifest generate_synthetic(const std::filesystem::path& root, const GenerateOptions& opt);

// Shuffled index batches for one epoch. Pretraining drops the trailing
// partial batch (the contrastive losses assume a fixed N); evaluation keeps
// it.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size, bool drop_last,
                                                    RngStream rng);

// --------------------------------------------------------------------------
// In-memory dataset
// --------------------------------------------------------------------------

template <typename Real>
struct PairedSample {
    Tensor<Real> points;  // [N, 3], centered, unit-sphere normalized
    Tensor<Real> image;   // [H, W, 3] in [0, 1]
    int class_id = 0;
    std::string sample_id;
};

// Loads and parses a point file: subsample to at most `max_points` with the
// given rng, then normalize.
template <typename Real>
Tensor<Real> load_points(const std::filesystem::path& path, std::size_t max_points, RngStream rng) {
    auto pts = read_points_file(path);
    if (pts.size() > max_points) {
        std::vector<std::size_t> idx(pts.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (std::size_t i = 0; i < max_points; ++i)
            std::swap(idx[i], idx[i + rng.uniform_index(idx.size() - i)]);
        std::vector<std::array<float, 3>> keep(max_points);
        for (std::size_t i = 0; i < max_points; ++i) keep[i] = pts[idx[i]];
        pts = std::move(keep);
    }
    normalize_cloud(pts);
    auto t = Tensor<Real>::zeros({pts.size(), 3});
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t c = 0; c < 3; ++c) t.data()[i * 3 + c] = static_cast<Real>(pts[i][c]);
    return t;
}

// Caches every referenced point cloud (normalized, full resolution) and the
// raw image bytes of one dataset. Subsampling to a working size happens per
// access so eval and pretraining can use different point budgets.
template <typename Real>
class LoadedDataset {
public:
    explicit LoadedDataset(DatasetManifest manifest) : manifest_(std::move(manifest)) {
        points_.resize(manifest_.entries.size());
        images_.resize(manifest_.entries.size());
        for (std::size_t i = 0; i < manifest_.entries.size(); ++i) {
            const auto& e = manifest_.entries[i];
            auto pts = read_points_file(manifest_.root / e.points_file);
            normalize_cloud(pts);
            points_[i] = std::move(pts);
            images_[i].reserve(e.image_files.size());
            for (const auto& img : e.image_files) images_[i].push_back(read_ppm(manifest_.root / img));
        }
    }

    const DatasetManifest& manifest() const { return manifest_; }
    std::size_t size() const { return manifest_.entries.size(); }
    const ManifestEntry& entry(std::size_t i) const { return manifest_.entries[i]; }
    int views() const { return manifest_.views; }

    Tensor<Real> points(std::size_t i, std::size_t max_points, RngStream rng) const {
        const auto& src = points_[i];
        std::vector<std::size_t> idx(src.size());
        for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
        std::size_t n = src.size();
        if (n > max_points) {
            for (std::size_t j = 0; j < max_points; ++j)
                std::swap(idx[j], idx[j + rng.uniform_index(idx.size() - j)]);
            n = max_points;
        }
        auto t = Tensor<Real>::zeros({n, 3});
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t c = 0; c < 3; ++c) t.data()[j * 3 + c] = static_cast<Real>(src[idx[j]][c]);
        return t;
    }

    Tensor<Real> image(std::size_t i, std::size_t view, bool hflip = false) const {
        const auto& img = images_[i].at(view);
        const std::size_t h = static_cast<std::size_t>(img.height), w = static_cast<std::size_t>(img.width);
        auto t = Tensor<Real>::zeros({h, w, 3});
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t cpix = 0; cpix < w; ++cpix) {
                const std::size_t src_c = hflip ? w - 1 - cpix : cpix;
                for (std::size_t ch = 0; ch < 3; ++ch)
                    t.data()[(r * w + cpix) * 3 + ch] =
                        static_cast<Real>(img.rgb[(r * w + src_c) * 3 + ch]) / Real(255);
            }
        return t;
    }

    PairedSample<Real> paired_sample(std::size_t i, std::size_t view, std::size_t max_points,
                                     RngStream rng) const {
        return PairedSample<Real>{points(i, max_points, rng), image(i, view), manifest_.entries[i].class_id,
                                  manifest_.entries[i].id};
    }

private:
    DatasetManifest manifest_;
    std::vector<std::vector<std::array<float, 3>>> points_;
    std::vector<std::vector<PpmImage>> images_;
};

}  // namespace vip
