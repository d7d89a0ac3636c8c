// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0
//
// Verification battery: independent reference implementations (plain-loop
// matmul, full-sort neighbor search, literal contrastive-loss evaluation,
// a step-by-step encoder layer) and the checks that compare the production
// paths against them. The references deliberately avoid the library's own
// operators.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "vipformer/model.hpp"

namespace vip::selfcheck {

// ---------------------------------------------------------------------------
// Reference implementations (all double precision)
// ---------------------------------------------------------------------------

std::vector<double> matmul_reference(const std::vector<double>& a, std::size_t ar, std::size_t ac,
                                     const std::vector<double>& b, std::size_t bc);
std::vector<double> softmax_reference(const std::vector<double>& row);
std::vector<double> layer_norm_reference(const std::vector<double>& row, const std::vector<double>& gamma,
                                         const std::vector<double>& beta, double eps);

// Greedy max-min selection recomputed from scratch at every pick.
std::vector<std::size_t> fps_reference(const std::vector<double>& points, std::size_t n, std::size_t channels,
                                       std::size_t g, std::size_t first);
// Neighbors by exhaustive stable sort on (distance, index).
std::vector<std::size_t> knn_reference(const std::vector<double>& points, std::size_t n, std::size_t channels,
                                       const double* center, std::size_t k);

// Literal evaluation of the pairwise contrastive objective with per-pair
// cosine similarities.
double nt_xent_reference(const std::vector<double>& u, const std::vector<double>& v, std::size_t n,
                         std::size_t dim, double tau);

// One pre-LN encoder layer evaluated step by step from raw weight arrays.
std::vector<double> encoder_layer_reference(const std::vector<double>& input, std::size_t tokens, std::size_t dim,
                                            std::size_t heads, std::size_t ff_dim,
                                            const std::vector<double>& ln1_gamma,
                                            const std::vector<double>& ln1_beta, const std::vector<double>& qkv_w,
                                            const std::vector<double>& qkv_b, const std::vector<double>& proj_w,
                                            const std::vector<double>& proj_b, const std::vector<double>& ln2_gamma,
                                            const std::vector<double>& ln2_beta, const std::vector<double>& fc1_w,
                                            const std::vector<double>& fc1_b, const std::vector<double>& fc2_w,
                                            const std::vector<double>& fc2_b);

// ---------------------------------------------------------------------------
// Check battery
// ---------------------------------------------------------------------------

struct CheckResult {
    bool pass = false;
    std::string detail;
};

// Shipped architecture presets (mirrors configs/tableI.cfg, tableII.cfg).
ViPFormerConfig preset_small();  // 9 layers, ratio 2, 4 heads, length 128, dim 256
ViPFormerConfig preset_large();  // 9 layers, ratio 4, 6 heads, length 128, dim 384

CheckResult check_param_counts();
CheckResult check_contrast_oracle(int trials);
CheckResult check_gradients();
CheckResult check_fps_knn_oracle(int clouds);
CheckResult check_scheduler();
CheckResult check_arch_invariants();

// Runs the whole battery, one line per check. Returns the failure count.
int run_quick_suite(std::ostream& os);

}  // namespace vip::selfcheck
