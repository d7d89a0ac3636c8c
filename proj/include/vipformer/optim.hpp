// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0
//
// AdamW with decoupled weight decay, and the cosine-annealing warm-restart
// learning rate schedule (linear warmup per cycle, peak decayed after each
// restart).

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "vipformer/tensor.hpp"

namespace vip {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

template <typename Real>
class AdamW {
public:
    AdamW(std::vector<std::pair<std::string, Tensor<Real>>> params, AdamWOptions opt)
        : opt_(opt) {
        slots_.reserve(params.size());
        for (auto& [name, p] : params) {
            Slot s;
            s.name = name;
            s.param = p;
            s.m.assign(p.size(), Real(0));
            s.v.assign(p.size(), Real(0));
            slots_.push_back(std::move(s));
        }
    }

    // theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
    void step(double lr) {
        ++step_count_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_count_));
        const Real b1 = static_cast<Real>(opt_.beta1), b2 = static_cast<Real>(opt_.beta2);
        const Real one_m_b1 = Real(1) - b1, one_m_b2 = Real(1) - b2;
        const Real inv_bc1 = static_cast<Real>(1.0 / bc1), inv_bc2 = static_cast<Real>(1.0 / bc2);
        const Real eps = static_cast<Real>(opt_.eps);
        const Real lr_r = static_cast<Real>(lr);
        const Real wd = static_cast<Real>(opt_.weight_decay);
        for (auto& s : slots_) {
            auto& g = s.param.grad();  // allocates zeros for never-touched params
            Real* theta = s.param.data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (!std::isfinite(static_cast<double>(g[i])))
                    throw NumericError("NaN/Inf gradient in parameter '" + s.name + "' at element " +
                                       std::to_string(i));
                s.m[i] = b1 * s.m[i] + one_m_b1 * g[i];
                s.v[i] = b2 * s.v[i] + one_m_b2 * g[i] * g[i];
                const Real m_hat = s.m[i] * inv_bc1;
                const Real v_hat = s.v[i] * inv_bc2;
                theta[i] -= lr_r * (m_hat / (std::sqrt(v_hat) + eps) + wd * theta[i]);
            }
        }
    }

    void zero_grad() {
        for (auto& s : slots_) s.param.zero_grad();
    }

    long step_count() const { return step_count_; }
    void set_step_count(long n) { step_count_ = n; }
    const AdamWOptions& options() const { return opt_; }

    template <typename Fn>
    void for_each_state(Fn&& fn) {
        for (auto& s : slots_) fn(s.name, s.m, s.v, s.param.shape());
    }

private:
    struct Slot {
        std::string name;
        Tensor<Real> param;
        std::vector<Real> m, v;
    };

    std::vector<Slot> slots_;
    AdamWOptions opt_;
    long step_count_ = 0;
};

// Warm-restart cosine schedule. Within each cycle of `cycle_len` epochs the
// rate ramps linearly to the cycle peak over `warmup_len` epochs, then
// follows half-cosine decay to zero; the peak shrinks by `peak_decay` after
// every restart. Fractional epochs give per-step smoothing.
struct SchedulerState {
    double base_peak = 1e-3;
    double peak_decay = 0.6;
    double cycle_len = 100.0;  // epochs
    double warmup_len = 5.0;   // epochs

    void validate() const {
        if (!(warmup_len >= 0 && warmup_len < cycle_len))
            throw ParamError("scheduler: need 0 <= warmup < cycle length");
        if (!(peak_decay > 0 && peak_decay <= 1)) throw ParamError("scheduler: peak decay must be in (0, 1]");
    }
};

inline double lr_at(const SchedulerState& s, double epoch) {
    s.validate();
    if (epoch < 0) throw ParamError("lr_at: epoch must be >= 0");
    const double cycle = std::floor(epoch / s.cycle_len);
    const double t = epoch - cycle * s.cycle_len;
    const double peak = s.base_peak * std::pow(s.peak_decay, cycle);
    if (t < s.warmup_len) return peak * t / s.warmup_len;
    const double progress = (t - s.warmup_len) / (s.cycle_len - s.warmup_len);
    return peak * 0.5 * (1.0 + std::cos(3.141592653589793238462643383280 * progress));
}

}  // namespace vip
