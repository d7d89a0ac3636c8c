// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0

#include "vipformer/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "vipformer/contrast.hpp"
#include "vipformer/optim.hpp"
#include "vipformer/tokenize.hpp"

namespace vip::selfcheck {

namespace {

double frand(RngStream& rng, double lo = -1.0, double hi = 1.0) { return rng.uniform(lo, hi); }

std::vector<double> random_vec(RngStream& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = frand(rng, lo, hi);
    return v;
}

std::string fmt_err(double err) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << err;
    return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// References
// ---------------------------------------------------------------------------

std::vector<double> matmul_reference(const std::vector<double>& a, std::size_t ar, std::size_t ac,
                                     const std::vector<double>& b, std::size_t bc) {
    std::vector<double> c(ar * bc, 0.0);
    for (std::size_t i = 0; i < ar; ++i)
        for (std::size_t j = 0; j < bc; ++j) {
            double acc = 0;
            for (std::size_t k = 0; k < ac; ++k) acc += a[i * ac + k] * b[k * bc + j];
            c[i * bc + j] = acc;
        }
    return c;
}

std::vector<double> softmax_reference(const std::vector<double>& row) {
    std::vector<double> out(row.size());
    double sum = 0;
    for (std::size_t i = 0; i < row.size(); ++i) sum += std::exp(row[i]);
    for (std::size_t i = 0; i < row.size(); ++i) out[i] = std::exp(row[i]) / sum;
    return out;
}

std::vector<double> layer_norm_reference(const std::vector<double>& row, const std::vector<double>& gamma,
                                         const std::vector<double>& beta, double eps) {
    const std::size_t d = row.size();
    double mean = 0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = (row[i] - mean) / std::sqrt(var + eps) * gamma[i] + beta[i];
    return out;
}

std::vector<std::size_t> fps_reference(const std::vector<double>& points, std::size_t n, std::size_t channels,
                                       std::size_t g, std::size_t first) {
    std::vector<std::size_t> picked{first};
    while (picked.size() < g) {
        std::size_t best = 0;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            double to_set = std::numeric_limits<double>::max();
            for (std::size_t s : picked) {
                double d = 0;
                for (std::size_t c = 0; c < channels; ++c) {
                    const double diff = points[i * channels + c] - points[s * channels + c];
                    d += diff * diff;
                }
                to_set = std::min(to_set, d);
            }
            if (to_set > best_d) {
                best_d = to_set;
                best = i;
            }
        }
        picked.push_back(best);
    }
    return picked;
}

std::vector<std::size_t> knn_reference(const std::vector<double>& points, std::size_t n, std::size_t channels,
                                       const double* center, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = 0;
        for (std::size_t c = 0; c < channels; ++c) {
            const double diff = points[i * channels + c] - center[c];
            d += diff * diff;
        }
        dist[i] = {d, i};
    }
    std::stable_sort(dist.begin(), dist.end());
    std::vector<std::size_t> out(k);
    for (std::size_t i = 0; i < k; ++i) out[i] = dist[i].second;
    return out;
}

double nt_xent_reference(const std::vector<double>& u, const std::vector<double>& v, std::size_t n,
                         std::size_t dim, double tau) {
    auto cosine = [&](const std::vector<double>& a, std::size_t i, const std::vector<double>& b, std::size_t j) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t c = 0; c < dim; ++c) {
            dot += a[i * dim + c] * b[j * dim + c];
            na += a[i * dim + c] * a[i * dim + c];
            nb += b[j * dim + c] * b[j * dim + c];
        }
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };
    auto direction = [&](const std::vector<double>& anchors, const std::vector<double>& others) {
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double denom = 0;
            for (std::size_t k = 0; k < n; ++k) {
                if (k != i) denom += std::exp(cosine(anchors, i, anchors, k) / tau);
                denom += std::exp(cosine(anchors, i, others, k) / tau);
            }
            total += -std::log(std::exp(cosine(anchors, i, others, i) / tau) / denom);
        }
        return total;
    };
    return (direction(u, v) + direction(v, u)) / (2.0 * static_cast<double>(n));
}

std::vector<double> encoder_layer_reference(const std::vector<double>& input, std::size_t tokens, std::size_t dim,
                                            std::size_t heads, std::size_t ff_dim,
                                            const std::vector<double>& ln1_gamma,
                                            const std::vector<double>& ln1_beta, const std::vector<double>& qkv_w,
                                            const std::vector<double>& qkv_b, const std::vector<double>& proj_w,
                                            const std::vector<double>& proj_b, const std::vector<double>& ln2_gamma,
                                            const std::vector<double>& ln2_beta, const std::vector<double>& fc1_w,
                                            const std::vector<double>& fc1_b, const std::vector<double>& fc2_w,
                                            const std::vector<double>& fc2_b) {
    const std::size_t dh = dim / heads;
    auto ln = [&](const std::vector<double>& x, const std::vector<double>& gamma, const std::vector<double>& beta) {
        std::vector<double> out(x.size());
        for (std::size_t t = 0; t < tokens; ++t) {
            std::vector<double> row(x.begin() + static_cast<std::ptrdiff_t>(t * dim),
                                    x.begin() + static_cast<std::ptrdiff_t>((t + 1) * dim));
            auto normed = layer_norm_reference(row, gamma, beta, 1e-5);
            std::copy(normed.begin(), normed.end(), out.begin() + static_cast<std::ptrdiff_t>(t * dim));
        }
        return out;
    };
    auto affine = [&](const std::vector<double>& x, std::size_t in, const std::vector<double>& w,
                      const std::vector<double>& b, std::size_t out_d) {
        auto y = matmul_reference(x, tokens, in, w, out_d);
        for (std::size_t t = 0; t < tokens; ++t)
            for (std::size_t j = 0; j < out_d; ++j) y[t * out_d + j] += b[j];
        return y;
    };

    // attention sublayer
    auto h = ln(input, ln1_gamma, ln1_beta);
    auto qkv = affine(h, dim, qkv_w, qkv_b, 3 * dim);
    std::vector<double> ctx(tokens * dim, 0.0);
    for (std::size_t head = 0; head < heads; ++head) {
        for (std::size_t ti = 0; ti < tokens; ++ti) {
            std::vector<double> scores(tokens);
            for (std::size_t tj = 0; tj < tokens; ++tj) {
                double dot = 0;
                for (std::size_t c = 0; c < dh; ++c)
                    dot += qkv[ti * 3 * dim + head * dh + c] * qkv[tj * 3 * dim + dim + head * dh + c];
                scores[tj] = dot / std::sqrt(static_cast<double>(dh));
            }
            auto attn = softmax_reference(scores);
            for (std::size_t tj = 0; tj < tokens; ++tj)
                for (std::size_t c = 0; c < dh; ++c)
                    ctx[ti * dim + head * dh + c] += attn[tj] * qkv[tj * 3 * dim + 2 * dim + head * dh + c];
        }
    }
    auto msa = affine(ctx, dim, proj_w, proj_b, dim);
    std::vector<double> zhat(tokens * dim);
    for (std::size_t i = 0; i < zhat.size(); ++i) zhat[i] = msa[i] + input[i];

    // feed-forward sublayer
    auto h2 = ln(zhat, ln2_gamma, ln2_beta);
    auto ff1 = affine(h2, dim, fc1_w, fc1_b, ff_dim);
    for (auto& v : ff1) v = v * 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
    auto ff2 = affine(ff1, ff_dim, fc2_w, fc2_b, dim);
    std::vector<double> out(tokens * dim);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ff2[i] + zhat[i];
    return out;
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

ViPFormerConfig preset_small() {
    ViPFormerConfig c;
    c.layers = 9;
    c.mlp_ratio = 2;
    c.heads = 4;
    c.point_tokens = 128;
    c.dim = 256;
    return c;
}

ViPFormerConfig preset_large() {
    ViPFormerConfig c;
    c.layers = 9;
    c.mlp_ratio = 4;
    c.heads = 6;
    c.point_tokens = 128;
    c.dim = 384;
    return c;
}

// ---------------------------------------------------------------------------
// Checks
// ---------------------------------------------------------------------------

CheckResult check_param_counts() {
    const long long small = count_parameters(preset_small());
    const long long large = count_parameters(preset_large());
    const bool small_ok = std::llabs(small - 5100000LL) <= 5100000LL / 20;
    const bool large_ok = std::llabs(large - 16700000LL) <= 16700000LL / 20;
    std::ostringstream os;
    os << "small preset " << small << " (target 5.1M +-5%), large preset " << large << " (target 16.7M +-5%)";
    return {small_ok && large_ok, os.str()};
}

CheckResult check_contrast_oracle(int trials) {
    RngStream rng(20240117);
    double worst = 0;
    for (int t = 0; t < trials; ++t) {
        const std::size_t n = 1 + rng.uniform_index(8);
        const std::size_t dim = 2 + rng.uniform_index(5);
        const double tau = rng.uniform(0.05, 1.0);
        auto uvec = random_vec(rng, n * dim);
        auto vvec = random_vec(rng, n * dim);
        auto u = Tensor<double>::from_data({n, dim}, uvec);
        auto v = Tensor<double>::from_data({n, dim}, vvec);
        const double got = nt_xent(u, v, tau).item();
        const double want = nt_xent_reference(uvec, vvec, n, dim, tau);
        worst = std::max(worst, std::abs(got - want));
    }
    // Degenerate all-identical case collapses to log(2N - 1).
    double worst_degenerate = 0;
    for (std::size_t n = 2; n <= 8; ++n) {
        std::vector<double> row{0.3, -0.7, 0.2};
        std::vector<double> all;
        for (std::size_t i = 0; i < n; ++i) all.insert(all.end(), row.begin(), row.end());
        auto u = Tensor<double>::from_data({n, 3}, all);
        auto v = Tensor<double>::from_data({n, 3}, all);
        const double got = nt_xent(u, v, 0.37).item();
        worst_degenerate = std::max(worst_degenerate, std::abs(got - std::log(2.0 * n - 1.0)));
    }
    auto one = Tensor<double>::from_data({1, 3}, {1.0, 2.0, 3.0});
    auto two = Tensor<double>::from_data({1, 3}, {0.5, -1.0, 0.25});
    const double at_one = nt_xent(one, two, 0.2).item();

    const bool pass = worst <= 1e-8 && worst_degenerate <= 1e-9 && at_one == 0.0;
    std::ostringstream os;
    os << trials << " random trials max |err| " << fmt_err(worst) << ", degenerate max |err| "
       << fmt_err(worst_degenerate) << ", N=1 loss " << at_one;
    return {pass, os.str()};
}

CheckResult check_fps_knn_oracle(int clouds) {
    RngStream rng(7321);
    for (int t = 0; t < clouds; ++t) {
        const std::size_t n = 2 + rng.uniform_index(63);
        const std::size_t g = 1 + rng.uniform_index(n);
        const std::size_t k = 1 + rng.uniform_index(n);
        auto flat = random_vec(rng, n * 3);
        auto cloud = Tensor<double>::from_data({n, 3}, flat);

        RngStream fps_rng = rng.fork(static_cast<std::uint64_t>(t));
        RngStream fps_probe = fps_rng;  // same seed: same first pick
        const std::size_t first = fps_probe.uniform_index(n);
        auto got = farthest_point_sample(cloud, g, fps_rng);
        auto want = fps_reference(flat, n, 3, g, first);
        if (got != want) return {false, "FPS mismatch on cloud " + std::to_string(t)};

        const std::size_t centers_n = 1 + rng.uniform_index(n);
        std::vector<double> centers_flat;
        for (std::size_t c = 0; c < centers_n; ++c) {
            // half existing points (exercises the zero-distance tie), half free
            if (rng.uniform() < 0.5) {
                const std::size_t src = rng.uniform_index(n);
                centers_flat.insert(centers_flat.end(), flat.begin() + static_cast<std::ptrdiff_t>(src * 3),
                                    flat.begin() + static_cast<std::ptrdiff_t>(src * 3 + 3));
            } else {
                auto c3 = random_vec(rng, 3);
                centers_flat.insert(centers_flat.end(), c3.begin(), c3.end());
            }
        }
        auto centers = Tensor<double>::from_data({centers_n, 3}, centers_flat);
        auto groups = knn_group(cloud, centers, k);
        for (std::size_t c = 0; c < centers_n; ++c) {
            auto want_nb = knn_reference(flat, n, 3, centers_flat.data() + c * 3, k);
            if (groups[c] != want_nb) return {false, "kNN mismatch on cloud " + std::to_string(t)};
        }
    }
    return {true, std::to_string(clouds) + " random clouds, exact index agreement (incl. tie-breaks)"};
}

CheckResult check_scheduler() {
    SchedulerState s;  // defaults: peak 1e-3, decay 0.6, cycle 100, warmup 5
    const double e1 = std::abs(lr_at(s, 5.0) - 0.001);
    const double e2 = std::abs(lr_at(s, 105.0) - 0.0006);
    const double e3 = std::abs(lr_at(s, 52.5) - 0.0005);
    std::ostringstream os;
    os << "lr(5)=" << lr_at(s, 5.0) << " lr(105)=" << lr_at(s, 105.0) << " lr(52.5)=" << lr_at(s, 52.5);
    return {e1 <= 1e-12 && e2 <= 1e-12 && e3 <= 1e-12, os.str()};
}

namespace {

// Tiny double-precision model used by gradient and invariance checks.
ViPFormerConfig tiny_config() {
    ViPFormerConfig c;
    c.layers = 1;
    c.heads = 2;
    c.dim = 8;
    c.mlp_ratio = 2;
    c.point_tokens = 4;
    c.neighbors = 4;
    c.patch = 4;
    c.image_size = 8;
    c.adapter_hidden = 6;
    c.dropout = 0.0;
    return c;
}

}  // namespace

CheckResult check_gradients() {
    RngStream rng(99);
    double worst = 0;
    std::string worst_name = "none";
    auto note = [&](const char* name, double err) {
        if (err > worst) {
            worst = err;
            worst_name = name;
        }
    };
    auto rand_tensor = [&](Shape shape) {
        auto t = Tensor<double>::zeros(shape);
        for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-1.0, 1.0);
        return t;
    };
    // Fixed projection to a scalar so every output element gets a distinct
    // gradient signal.
    auto project = [&](const Tensor<double>& t, std::uint64_t tag) {
        auto w = Tensor<double>::zeros(t.shape());
        RngStream prng = RngStream(4242).fork(tag);
        for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = prng.uniform(-1.0, 1.0);
        return sum(mul(t, w));
    };

    {
        auto x = rand_tensor({3, 5});
        auto y = rand_tensor({3, 5});
        note("add.lhs", grad_check([&](Tensor<double>& t) { return project(add(t, x), 1); }, y));
    }
    {
        auto a = rand_tensor({3, 5});
        auto bias = rand_tensor({5});
        note("add.broadcast", grad_check([&](Tensor<double>& t) { return project(add(a, t), 2); }, bias));
    }
    {
        auto a = rand_tensor({4, 4});
        auto y = rand_tensor({4, 4});
        note("mul", grad_check([&](Tensor<double>& t) { return project(mul(t, a), 3); }, y));
    }
    {
        auto x = rand_tensor({3, 4});
        note("scale", grad_check([&](Tensor<double>& t) { return project(scale(t, 1.7), 4); }, x));
    }
    {
        auto a = rand_tensor({2, 3, 4});
        auto b = rand_tensor({4, 5});
        note("matmul.a", grad_check([&](Tensor<double>& t) { return project(matmul(t, b), 5); }, a));
        note("matmul.b", grad_check([&](Tensor<double>& t) { return project(matmul(a, t), 6); }, b));
        auto c = rand_tensor({2, 5, 4});
        note("matmul.tb", grad_check([&](Tensor<double>& t) { return project(matmul(a, t, false, true), 7); }, c));
        auto d = rand_tensor({2, 4, 3});
        note("matmul.ta", grad_check([&](Tensor<double>& t) { return project(matmul(t, b, true, false), 8); }, d));
    }
    {
        auto x = rand_tensor({2, 3, 6});
        auto w = rand_tensor({6, 4});
        auto b = rand_tensor({4});
        note("linear.x", grad_check([&](Tensor<double>& t) { return project(linear(t, w, b), 9); }, x));
        note("linear.w", grad_check([&](Tensor<double>& t) { return project(linear(x, t, b), 10); }, w));
        note("linear.b", grad_check([&](Tensor<double>& t) { return project(linear(x, w, t), 11); }, b));
    }
    {
        // keep relu inputs away from the kink
        auto x = rand_tensor({4, 4});
        for (std::size_t i = 0; i < x.size(); ++i)
            if (std::abs(x.data()[i]) < 0.05) x.data()[i] = 0.1;
        note("relu", grad_check([&](Tensor<double>& t) { return project(relu(t), 12); }, x));
    }
    {
        auto x = rand_tensor({4, 4});
        note("gelu", grad_check([&](Tensor<double>& t) { return project(gelu(t), 13); }, x));
    }
    {
        auto x = rand_tensor({3, 5});
        note("softmax", grad_check([&](Tensor<double>& t) { return project(softmax_lastdim(t), 14); }, x));
    }
    {
        auto x = rand_tensor({3, 6});
        auto gamma = rand_tensor({6});
        auto beta = rand_tensor({6});
        note("layer_norm.x",
             grad_check([&](Tensor<double>& t) { return project(layer_norm(t, gamma, beta, 1e-5), 15); }, x));
        note("layer_norm.gamma",
             grad_check([&](Tensor<double>& t) { return project(layer_norm(x, t, beta, 1e-5), 16); }, gamma));
        note("layer_norm.beta",
             grad_check([&](Tensor<double>& t) { return project(layer_norm(x, gamma, t, 1e-5), 17); }, beta));
    }
    {
        auto x = rand_tensor({5, 4});
        auto gamma = rand_tensor({4});
        auto beta = rand_tensor({4});
        note("batch_norm.x", grad_check(
                                 [&](Tensor<double>& t) {
                                     BatchNormState<double> st;
                                     return project(batch_norm(t, gamma, beta, st, true), 18);
                                 },
                                 x));
        note("batch_norm.gamma", grad_check(
                                     [&](Tensor<double>& t) {
                                         BatchNormState<double> st;
                                         return project(batch_norm(x, t, beta, st, true), 19);
                                     },
                                     gamma));
        note("batch_norm.beta", grad_check(
                                    [&](Tensor<double>& t) {
                                        BatchNormState<double> st;
                                        return project(batch_norm(x, gamma, t, st, true), 20);
                                    },
                                    beta));
        BatchNormState<double> warmed;
        auto g2 = rand_tensor({4});
        auto b2 = rand_tensor({4});
        { NoGradGuard ng; batch_norm(x, g2, b2, warmed, true); }
        note("batch_norm.eval", grad_check(
                                    [&](Tensor<double>& t) {
                                        return project(batch_norm(t, g2, b2, warmed, false), 21);
                                    },
                                    x));
    }
    {
        auto x = rand_tensor({4, 6});
        note("dropout", grad_check(
                            [&](Tensor<double>& t) { return project(dropout(t, 0.3, 77, true), 22); }, x));
    }
    {
        auto qkv = rand_tensor({2, 3, 12});  // batch 2, tokens 3, dim 4, 2 heads
        note("attention", grad_check([&](Tensor<double>& t) { return project(attention(t, 2), 23); }, qkv));
    }
    {
        auto x = rand_tensor({2, 4, 3});
        note("pool_max_mean", grad_check([&](Tensor<double>& t) { return project(pool_max_mean(t), 24); }, x));
    }
    {
        auto x = rand_tensor({3, 4});
        note("sum", grad_check([&](Tensor<double>& t) { return sum(t); }, x));
        note("mean", grad_check([&](Tensor<double>& t) { return mean(t); }, x));
        note("reshape", grad_check([&](Tensor<double>& t) { return project(t.reshaped({4, 3}), 25); }, x));
    }
    {
        auto logits = rand_tensor({4, 5});
        std::vector<int> labels{0, 2, 4, 1};
        note("cross_entropy",
             grad_check([&](Tensor<double>& t) { return cross_entropy(t, labels); }, logits));
    }
    {
        auto u = rand_tensor({4, 6});
        auto v = rand_tensor({4, 6});
        note("nt_xent.u", grad_check([&](Tensor<double>& t) { return nt_xent(t, v, 0.2); }, u));
        note("nt_xent.v", grad_check([&](Tensor<double>& t) { return nt_xent(u, t, 0.2); }, v));
    }

    // One full encoder block: gradient in the input and in every parameter.
    {
        ViPFormerConfig cfg = tiny_config();
        auto w = init_weights<double>(cfg, RngStream(5));
        auto z0 = rand_tensor({4, 8});
        auto run_block = [&](Tensor<double>&) { return project(encoder_forward(z0, w, false, 0), 26); };
        note("encoder_block.input",
             grad_check([&](Tensor<double>& t) { return project(encoder_forward(t, w, false, 0), 26); }, z0));
        auto& lw = w.layers[0];
        Tensor<double>* params[] = {&lw.ln1_gamma, &lw.ln1_beta, &lw.qkv_w, &lw.qkv_b, &lw.proj_w, &lw.proj_b,
                                    &lw.ln2_gamma, &lw.ln2_beta, &lw.fc1_w, &lw.fc1_b, &lw.fc2_w, &lw.fc2_b};
        const char* names[] = {"ln1.g", "ln1.b", "qkv.w", "qkv.b", "proj.w", "proj.b",
                               "ln2.g", "ln2.b", "fc1.w", "fc1.b", "fc2.w", "fc2.b"};
        for (std::size_t i = 0; i < 12; ++i)
            note((std::string("encoder_block.") + names[i]).c_str(), grad_check(run_block, *params[i]));
    }

    // Combined objective on a tiny batch through the full pipeline.
    {
        ViPFormerConfig cfg = tiny_config();
        auto w = init_weights<double>(cfg, RngStream(6));
        RngStream drng(31);
        const std::size_t bsz = 4;
        auto patches1 = rand_tensor({bsz, 4, 12});
        auto centers1 = rand_tensor({bsz, 4, 3});
        auto patches2 = rand_tensor({bsz, 4, 12});
        auto centers2 = rand_tensor({bsz, 4, 3});
        auto img = rand_tensor({bsz, 4, 48});
        ContrastConfig ccfg;
        ccfg.tau = 0.3;
        ccfg.alpha = 0.7;
        auto run_loss = [&](Tensor<double>&) {
            w.oa_bn1 = BatchNormState<double>{};
            w.oa_bn2 = BatchNormState<double>{};
            auto p1 = point_branch_features(patches1, centers1, w, true, 0);
            auto p2 = point_branch_features(patches2, centers2, w, true, 0);
            auto f = image_branch_features(img, w, true, 0);
            return combined_loss(p1, p2, f, ccfg).total;
        };
        double worst_loss = 0;
        w.for_each_param([&](const std::string& name, Tensor<double>& p) {
            const double err = grad_check(run_loss, p);
            if (err > worst_loss) worst_loss = err;
            note(("combined_loss." + name).c_str(), err);
        });
        (void)worst_loss;
    }

    std::ostringstream os;
    os << "max relative error " << fmt_err(worst) << " (worst: " << worst_name << ", tolerance 1e-4)";
    return {worst < 1e-4, os.str()};
}

CheckResult check_arch_invariants() {
    RngStream rng(314);
    std::string fail;

    // attention rows sum to one
    {
        auto qkv = Tensor<double>::zeros({3, 6, 24});
        for (std::size_t i = 0; i < qkv.size(); ++i) qkv.data()[i] = rng.uniform(-2.0, 2.0);
        AttentionProbe probe;
        NoGradGuard ng;
        attention(qkv, 4, &probe);
        if (probe.max_row_sum_error > 1e-6) fail += "attention rows off by " + fmt_err(probe.max_row_sum_error) + "; ";
    }

    // point branch pooled feature invariant to token permutation
    {
        ViPFormerConfig cfg = tiny_config();
        auto w = init_weights<double>(cfg, RngStream(17));
        NoGradGuard ng;
        auto patches = Tensor<double>::zeros({1, 4, 12});
        auto centers = Tensor<double>::zeros({1, 4, 3});
        for (std::size_t i = 0; i < patches.size(); ++i) patches.data()[i] = rng.uniform(-1.0, 1.0);
        for (std::size_t i = 0; i < centers.size(); ++i) centers.data()[i] = rng.uniform(-1.0, 1.0);
        auto pooled = point_branch_pooled(patches, centers, w, false, 0);
        const std::size_t perm[4] = {2, 0, 3, 1};
        auto p2 = Tensor<double>::zeros({1, 4, 12});
        auto c2 = Tensor<double>::zeros({1, 4, 3});
        for (std::size_t t = 0; t < 4; ++t) {
            std::copy(patches.data() + perm[t] * 12, patches.data() + perm[t] * 12 + 12, p2.data() + t * 12);
            std::copy(centers.data() + perm[t] * 3, centers.data() + perm[t] * 3 + 3, c2.data() + t * 3);
        }
        auto pooled2 = point_branch_pooled(p2, c2, w, false, 0);
        double max_diff = 0;
        for (std::size_t i = 0; i < pooled.size(); ++i)
            max_diff = std::max(max_diff, std::abs(pooled.data()[i] - pooled2.data()[i]));
        if (max_diff > 1e-9) fail += "permutation changes pooled output by " + fmt_err(max_diff) + "; ";
    }

    // encoder weights shared across branches: one mutation moves both outputs
    {
        ViPFormerConfig cfg = tiny_config();
        auto w = init_weights<double>(cfg, RngStream(23));
        NoGradGuard ng;
        auto patches = Tensor<double>::zeros({2, 4, 12});
        auto centers = Tensor<double>::zeros({2, 4, 3});
        auto img = Tensor<double>::zeros({2, 4, 48});
        for (std::size_t i = 0; i < patches.size(); ++i) patches.data()[i] = rng.uniform(-1.0, 1.0);
        for (std::size_t i = 0; i < centers.size(); ++i) centers.data()[i] = rng.uniform(-1.0, 1.0);
        for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = rng.uniform(0.0, 1.0);
        auto run_both = [&]() {
            w.oa_bn1 = BatchNormState<double>{};
            w.oa_bn2 = BatchNormState<double>{};
            auto p = point_branch_features(patches, centers, w, true, 0);
            auto f = image_branch_features(img, w, true, 0);
            return std::make_pair(std::vector<double>(p.data(), p.data() + p.size()),
                                  std::vector<double>(f.data(), f.data() + f.size()));
        };
        auto before = run_both();
        w.layers[0].qkv_w.data()[5] += 0.25;
        auto after = run_both();
        if (before.first == after.first || before.second == after.second)
            fail += "encoder mutation did not reach both branches; ";
    }

    // pooling of a constant sequence is [c ; c] exactly
    {
        auto z = Tensor<double>::zeros({3, 4});
        for (std::size_t t = 0; t < 3; ++t)
            for (std::size_t d = 0; d < 4; ++d) z.data()[t * 4 + d] = 0.5 * static_cast<double>(d) - 1.0;
        NoGradGuard ng;
        auto r = pool_max_mean(z);
        for (std::size_t d = 0; d < 4; ++d) {
            const double c = 0.5 * static_cast<double>(d) - 1.0;
            if (r.data()[d] != c || r.data()[4 + d] != c) fail += "pool(constant) != [c;c]; ";
        }
    }

    if (!fail.empty()) return {false, fail};
    return {true, "attention rows, token permutation, weight sharing, constant pooling"};
}

int run_quick_suite(std::ostream& os) {
    struct Item {
        const char* name;
        CheckResult result;
    };
    Item items[] = {
        {"parameter counts vs presets", check_param_counts()},
        {"contrastive loss vs direct evaluation", check_contrast_oracle(1000)},
        {"gradients vs central differences", check_gradients()},
        {"FPS/kNN vs brute force", check_fps_knn_oracle(100)},
        {"scheduler pinned values", check_scheduler()},
        {"architectural invariants", check_arch_invariants()},
    };
    int failures = 0;
    for (const auto& item : items) {
        os << (item.result.pass ? "[ok]   " : "[FAIL] ") << item.name << ": " << item.result.detail << '\n';
        if (!item.result.pass) ++failures;
    }
    return failures;
}

}  // namespace vip::selfcheck
