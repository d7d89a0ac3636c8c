// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "vipformer/errors.hpp"

namespace vip {

// splitmix64: the mixing function used both for seeding and for deriving
// substreams. Fixed algorithm, identical output on every platform.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d49bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    return splitmix64(s);
}

// Substream purposes. Forking by purpose keeps the draws of one concern
// (e.g. dropout) independent of how much another concern (e.g. augmentation)
// consumed.
enum class RngPurpose : std::uint64_t {
    Init = 1,
    Dropout = 2,
    Augment = 3,
    Sampling = 4,
    Shuffle = 5,
    ViewSelect = 6,
    Eval = 7,
    Data = 8,
    Head = 9,
};

// Deterministic, splittable random stream.
//
// Draws come from xoshiro256**, seeded through splitmix64. `fork` derives an
// independent child stream from the parent's seed and a tag without touching
// the parent's draw state, so substreams never shift each other. Identical
// seeds give identical sequences across runs and platforms.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : seed_(seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    std::uint64_t seed() const { return seed_; }

    RngStream fork(std::uint64_t tag) const { return RngStream(mix64(seed_, tag)); }
    RngStream fork(RngPurpose purpose) const { return fork(static_cast<std::uint64_t>(purpose)); }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). The tiny modulo bias is irrelevant here and
    // the mapping stays platform-independent, unlike std distributions.
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw ParamError("uniform_index: n must be positive");
        return static_cast<std::size_t>(next_u64() % n);
    }

    // Standard normal via Box-Muller; always consumes exactly two draws.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Normal truncated to [-2 sigma, 2 sigma], rejection sampled.
    double truncated_normal(double sigma) {
        for (;;) {
            const double x = normal();
            if (std::abs(x) <= 2.0) return x * sigma;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[uniform_index(i)]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t seed_;
    std::uint64_t state_[4];
};

// One-shot counter-based uniform, used where a per-element value is needed
// without materializing a stream (dropout masks regenerate in backward).
inline double hashed_uniform(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t s = seed + index * 0x9e3779b97f4a7c15ULL;
    return static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
}

}  // namespace vip
