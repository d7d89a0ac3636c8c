// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0
//
// Normalized-temperature cross-entropy objectives over cosine similarity:
// the intra-modal loss between two augmented point cloud views, the
// cross-modal loss between point cloud and image features, and their
// weighted combination. Similarities and log-sum-exp run in double even when
// activations are float.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <vector>

#include "vipformer/tensor.hpp"

namespace vip {

struct ContrastConfig {
    enum class Mode { ImcOnly, CmcOnly, Both };

    Mode mode = Mode::Both;
    double tau = 0.1;    // temperature
    double alpha = 1.0;  // weight of the cross-modal term

    void validate() const {
        if (tau <= 0) throw ParamError("contrast: tau must be positive");
        if (alpha < 0) throw ParamError("contrast: alpha must be >= 0");
    }

    static Mode parse_mode(const std::string& s) {
        if (s == "imc" || s == "imc_only") return Mode::ImcOnly;
        if (s == "cmc" || s == "cmc_only") return Mode::CmcOnly;
        if (s == "both") return Mode::Both;
        throw ParamError("contrast: unknown mode '" + s + "' (expected imc|cmc|both)");
    }

    static const char* mode_name(Mode m) {
        switch (m) {
            case Mode::ImcOnly: return "IMC only";
            case Mode::CmcOnly: return "CMC only";
            default: return "IMC & CMC";
        }
    }

    static const char* mode_token(Mode m) {
        switch (m) {
            case Mode::ImcOnly: return "imc";
            case Mode::CmcOnly: return "cmc";
            default: return "both";
        }
    }
};

namespace detail {

using DMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Row-normalized double copy of an embedding matrix; rejects zero rows, for
// which cosine similarity is undefined.
template <typename Real>
void normalize_rows(const Tensor<Real>& x, DMat& out, Eigen::VectorXd& norms, const char* what) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    out.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    norms.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const double v = static_cast<double>(x.data()[i * d + j]);
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            sq += v * v;
        }
        const double norm = std::sqrt(sq);
        if (norm < 1e-12)
            throw ContractError(std::string("nt_xent: ") + what + " row " + std::to_string(i) +
                                " has zero norm; cosine similarity undefined");
        norms(static_cast<Eigen::Index>(i)) = norm;
        out.row(static_cast<Eigen::Index>(i)) /= norm;
    }
}

// One direction of the pair loss. For anchor rows U against counterpart V:
//   l_i = -S_uv(i,i)/tau + log( sum_{k != i} exp(S_uu(i,k)/tau)
//                             + sum_k       exp(S_uv(i,k)/tau) )
// Returns sum_i l_i and fills the softmax-style weights A (over S_uu, zero
// diagonal) and B (over S_uv) used by backward.
inline double ntxent_direction(const DMat& suu, const DMat& suv, double tau, DMat& a, DMat& b) {
    const Eigen::Index n = suu.rows();
    a.setZero(n, n);
    b.setZero(n, n);
    double total = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < n; ++k) {
            if (k != i) mx = std::max(mx, suu(i, k) / tau);
            mx = std::max(mx, suv(i, k) / tau);
        }
        double z = 0;
        for (Eigen::Index k = 0; k < n; ++k) {
            if (k != i) {
                a(i, k) = std::exp(suu(i, k) / tau - mx);
                z += a(i, k);
            }
            b(i, k) = std::exp(suv(i, k) / tau - mx);
            z += b(i, k);
        }
        const double log_z = mx + std::log(z);
        total += -suv(i, i) / tau + log_z;
        const double inv_z = 1.0 / z;
        a.row(i) *= inv_z;
        b.row(i) *= inv_z;
    }
    return total;
}

}  // namespace detail

// Pairwise NT-Xent loss over rows of u and v (corresponding rows are
// positives), symmetrized over both directions and averaged with 1/(2N).
// Scale invariant in each row (cosine similarity); differentiable in both
// inputs.
template <typename Real>
Tensor<Real> nt_xent(const Tensor<Real>& u, const Tensor<Real>& v, double tau) {
    if (tau <= 0) throw ParamError("nt_xent: tau must be positive");
    if (u.rank() != 2 || v.rank() != 2 || u.shape() != v.shape())
        throw ShapeError("nt_xent: expected matching [N, dim] inputs, got " + shape_str(u.shape()) + " vs " +
                         shape_str(v.shape()));
    const std::size_t n = u.dim(0), d = u.dim(1);
    if (n == 0) throw ShapeError("nt_xent: empty batch");

    detail::DMat un, vn;
    Eigen::VectorXd unorm, vnorm;
    detail::normalize_rows(u, un, unorm, "first input");
    detail::normalize_rows(v, vn, vnorm, "second input");

    detail::DMat suu = un * un.transpose();
    detail::DMat svv = vn * vn.transpose();
    detail::DMat suv = un * vn.transpose();
    detail::DMat svu = suv.transpose();

    detail::DMat a1, b1, a2, b2;
    const double l_uv = detail::ntxent_direction(suu, suv, tau, a1, b1);
    const double l_vu = detail::ntxent_direction(svv, svu, tau, a2, b2);
    const double value = (l_uv + l_vu) / (2.0 * static_cast<double>(n));

    auto out = detail::make_result<Real>({1});
    out->value[0] = static_cast<Real>(value);

    if (detail::track<Real>({u, v})) {
        auto un_node = u.node();
        auto vn_node = v.node();
        detail::connect<Real>(
            out, {u, v},
            [un_node, vn_node, n, d, tau, un = std::move(un), vn = std::move(vn), unorm = std::move(unorm),
             vnorm = std::move(vnorm), a1 = std::move(a1), b1 = std::move(b1), a2 = std::move(a2),
             b2 = std::move(b2)](Node<Real>& self) {
                const double c = static_cast<double>(self.grad[0]) / (2.0 * static_cast<double>(n) * tau);
                const Eigen::Index ni = static_cast<Eigen::Index>(n);

                // d/dS terms: A over intra-similarities, (B - I) over cross.
                detail::DMat h1 = b1;
                detail::DMat h2 = b2;
                for (Eigen::Index i = 0; i < ni; ++i) {
                    h1(i, i) -= 1.0;
                    h2(i, i) -= 1.0;
                }
                // S_uu = U U^T contributes (A1 + A1^T) U ; S_uv = U V^T
                // contributes H1 V to dU and H1^T U to dV; the v-anchored
                // direction mirrors this.
                detail::DMat du = (a1 + a1.transpose()) * un + h1 * vn + h2.transpose() * vn;
                detail::DMat dv = (a2 + a2.transpose()) * vn + h2 * un + h1.transpose() * un;
                du *= c;
                dv *= c;

                auto pull_back = [](const detail::DMat& dnorm, const detail::DMat& normed,
                                    const Eigen::VectorXd& norms, Eigen::Index i, Eigen::Index dcols,
                                    auto&& sink) {
                    // through x_hat = x / |x|: dx = (g - x_hat (x_hat . g)) / |x|
                    double dot = 0;
                    for (Eigen::Index j = 0; j < dcols; ++j) dot += dnorm(i, j) * normed(i, j);
                    for (Eigen::Index j = 0; j < dcols; ++j)
                        sink(j, (dnorm(i, j) - normed(i, j) * dot) / norms(i));
                };
                const Eigen::Index di = static_cast<Eigen::Index>(d);
                if (un_node->requires_grad) {
                    un_node->ensure_grad();
                    for (Eigen::Index i = 0; i < ni; ++i)
                        pull_back(du, un, unorm, i, di, [&](Eigen::Index j, double g) {
                            un_node->grad[static_cast<std::size_t>(i) * d + static_cast<std::size_t>(j)] +=
                                static_cast<Real>(g);
                        });
                }
                if (vn_node->requires_grad) {
                    vn_node->ensure_grad();
                    for (Eigen::Index i = 0; i < ni; ++i)
                        pull_back(dv, vn, vnorm, i, di, [&](Eigen::Index j, double g) {
                            vn_node->grad[static_cast<std::size_t>(i) * d + static_cast<std::size_t>(j)] +=
                                static_cast<Real>(g);
                        });
                }
            });
    }
    return Tensor<Real>(std::move(out));
}

// Intra-modal contrast between two augmented views of the same clouds.
template <typename Real>
Tensor<Real> imc_loss(const Tensor<Real>& p_t1, const Tensor<Real>& p_t2, double tau) {
    return nt_xent(p_t1, p_t2, tau);
}

// Cross-modal contrast between point features and paired image features.
template <typename Real>
Tensor<Real> cmc_loss(const Tensor<Real>& p, const Tensor<Real>& f, double tau) {
    return nt_xent(p, f, tau);
}

template <typename Real>
struct LossBreakdown {
    Tensor<Real> total;
    Tensor<Real> imc;  // undefined when the mode skips it
    Tensor<Real> cmc;

    double imc_value() const { return imc.defined() ? static_cast<double>(imc.item()) : 0.0; }
    double cmc_value() const { return cmc.defined() ? static_cast<double>(cmc.item()) : 0.0; }
};

// Mode-dispatched total: imc + alpha * cmc, one term alone for the ablation
// modes. The cross-modal term consumes the first view's point features.
template <typename Real>
LossBreakdown<Real> combined_loss(const Tensor<Real>& p_t1, const Tensor<Real>& p_t2, const Tensor<Real>& f,
                                  const ContrastConfig& cfg) {
    cfg.validate();
    LossBreakdown<Real> out;
    switch (cfg.mode) {
        case ContrastConfig::Mode::ImcOnly:
            if (!p_t1.defined() || !p_t2.defined())
                throw ContractError("combined_loss: IMC mode needs both point cloud views");
            out.imc = imc_loss(p_t1, p_t2, cfg.tau);
            out.total = out.imc;
            break;
        case ContrastConfig::Mode::CmcOnly:
            if (!p_t1.defined() || !f.defined())
                throw ContractError("combined_loss: CMC mode needs point and image features");
            out.cmc = cmc_loss(p_t1, f, cfg.tau);
            out.total = out.cmc;
            break;
        case ContrastConfig::Mode::Both:
            if (!p_t1.defined() || !p_t2.defined() || !f.defined())
                throw ContractError("combined_loss: combined mode needs two point views and image features");
            out.imc = imc_loss(p_t1, p_t2, cfg.tau);
            out.cmc = cmc_loss(p_t1, f, cfg.tau);
            out.total = add(out.imc, scale(out.cmc, static_cast<Real>(cfg.alpha)));
            break;
    }
    return out;
}

}  // namespace vip
