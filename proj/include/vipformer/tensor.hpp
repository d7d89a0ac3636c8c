// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0
//
// Dense row-major tensors with reverse-mode gradients on a dynamically
// recorded graph. Scalar type is a template parameter: training runs in
// float, verification in double. Matrix products map onto Eigen kernels;
// everything else is written out directly.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vipformer/errors.hpp"
#include "vipformer/rng.hpp"

namespace vip {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Whether newly created ops record parents/backward closures. Disabled for
// pure inference so intermediate buffers free as handles go out of scope.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename Real>
struct Node {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // allocated lazily; same layout as value
    bool requires_grad = false;
    bool leaf = true;
    std::string name;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::size_t size() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
    }
};

template <typename Real>
class Tensor {
public:
    using value_type = Real;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<Real>> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape) { return filled(std::move(shape), Real(0)); }

    static Tensor filled(Shape shape, Real v) {
        auto n = std::make_shared<Node<Real>>();
        n->value.assign(numel(shape), v);
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<Real> data) {
        if (numel(shape) != data.size())
            throw ShapeError("from_data: " + shape_str(shape) + " does not hold " +
                             std::to_string(data.size()) + " values");
        auto n = std::make_shared<Node<Real>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        return Tensor(std::move(n));
    }

    static Tensor scalar(Real v) { return from_data({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape[i]; }

    Real* data() { return node_->value.data(); }
    const Real* data() const { return node_->value.data(); }
    std::vector<Real>& values() { return node_->value; }
    const std::vector<Real>& values() const { return node_->value; }

    Real item() const {
        if (size() != 1) throw ContractError("item: tensor has " + std::to_string(size()) + " elements");
        return node_->value[0];
    }

    Tensor& set_requires_grad(bool flag = true) {
        if (!node_->leaf) throw ContractError("requires_grad can only be toggled on leaf tensors");
        node_->requires_grad = flag;
        return *this;
    }
    bool requires_grad() const { return node_->requires_grad; }

    Tensor& set_name(std::string name) {
        node_->name = std::move(name);
        return *this;
    }
    const std::string& name() const { return node_->name; }

    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    std::vector<Real>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<Real>& grad() const {
        if (!has_grad()) throw ContractError("grad: no gradient recorded for this tensor");
        return node_->grad;
    }
    void zero_grad() {
        if (node_->grad.size() == node_->value.size())
            std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
    }

    // Reinterpret the flat buffer under a new shape; shares storage and
    // gradient with the source node.
    Tensor reshaped(Shape shape) const {
        if (numel(shape) != size())
            throw ShapeError("reshape: cannot view " + shape_str(node_->shape) + " as " + shape_str(shape));
        auto out = std::make_shared<Node<Real>>();
        out->shape = std::move(shape);
        out->value = node_->value;
        if (grad_mode() && node_->requires_grad) {
            out->requires_grad = true;
            out->leaf = false;
            out->parents = {node_};
            auto src = node_;
            out->backward_fn = [src](Node<Real>& self) {
                src->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) src->grad[i] += self.grad[i];
            };
        }
        return Tensor(std::move(out));
    }

    std::shared_ptr<Node<Real>>& node() { return node_; }
    const std::shared_ptr<Node<Real>>& node() const { return node_; }

private:
    std::shared_ptr<Node<Real>> node_;
};

namespace detail {

template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatMap = Eigen::Map<Mat<Real>>;
template <typename Real>
using ConstMatMap = Eigen::Map<const Mat<Real>>;

template <typename Real>
std::shared_ptr<Node<Real>> make_result(Shape shape) {
    auto n = std::make_shared<Node<Real>>();
    n->value.resize(numel(shape));
    n->shape = std::move(shape);
    return n;
}

template <typename Real>
bool track(const std::initializer_list<Tensor<Real>>& inputs) {
    if (!grad_mode()) return false;
    for (const auto& t : inputs)
        if (t.defined() && t.node()->requires_grad) return true;
    return false;
}

template <typename Real>
void connect(std::shared_ptr<Node<Real>>& out, std::initializer_list<Tensor<Real>> inputs,
             std::function<void(Node<Real>&)> fn) {
    out->requires_grad = true;
    out->leaf = false;
    for (const auto& t : inputs)
        if (t.defined()) out->parents.push_back(t.node());
    out->backward_fn = std::move(fn);
}

// C (stored row-major r x c) accumulates A(ta) * B(tb).
template <typename Real>
void gemm_acc(MatMap<Real> c, ConstMatMap<Real> a, bool ta, ConstMatMap<Real> b, bool tb) {
    if (!ta && !tb)
        c.noalias() += a * b;
    else if (!ta && tb)
        c.noalias() += a * b.transpose();
    else if (ta && !tb)
        c.noalias() += a.transpose() * b;
    else
        c.noalias() += a.transpose() * b.transpose();
}

inline bool suffix_of(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcasting arithmetic
// ---------------------------------------------------------------------------

// a + b. Shapes must match, or b's shape must be a trailing suffix of a's
// (bias and position-table style broadcast).
template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (!detail::suffix_of(b.shape(), a.shape()))
        throw ShapeError("add: " + shape_str(b.shape()) + " does not broadcast onto " + shape_str(a.shape()));
    auto out = detail::make_result<Real>(a.shape());
    const std::size_t bs = b.size();
    const Real* pa = a.data();
    const Real* pb = b.data();
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = pa[i] + pb[i % bs];
    if (detail::track<Real>({a, b})) {
        auto an = a.node();
        auto bn = b.node();
        detail::connect<Real>(out, {a, b}, [an, bn, bs](Node<Real>& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i % bs] += self.grad[i];
            }
        });
    }
    return Tensor<Real>(std::move(out));
}

// Hadamard product, identical shapes.
template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto out = detail::make_result<Real>(a.shape());
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.data()[i] * b.data()[i];
    if (detail::track<Real>({a, b})) {
        auto an = a.node();
        auto bn = b.node();
        detail::connect<Real>(out, {a, b}, [an, bn](Node<Real>& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
            }
        });
    }
    return Tensor<Real>(std::move(out));
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
    auto out = detail::make_result<Real>(a.shape());
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.data()[i] * c;
    if (detail::track<Real>({a})) {
        auto an = a.node();
        detail::connect<Real>(out, {a}, [an, c](Node<Real>& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
        });
    }
    return Tensor<Real>(std::move(out));
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

// Batched matrix product over the last two axes. `b` is either rank 2
// (shared across the batch) or has the same leading dims as `a`. Transpose
// flags apply to the logical operands.
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b, bool ta = false, bool tb = false) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul: operands must be at least rank 2, got " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const bool shared_b = b.rank() == 2 && a.rank() > 2;
    if (!shared_b && a.rank() != b.rank())
        throw ShapeError("matmul: rank mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));

    const std::size_t ar = a.dim(a.rank() - 2), ac = a.dim(a.rank() - 1);
    const std::size_t br = b.dim(b.rank() - 2), bc = b.dim(b.rank() - 1);
    const std::size_t m = ta ? ac : ar, ka = ta ? ar : ac;
    const std::size_t kb = tb ? bc : br, n = tb ? br : bc;
    if (ka != kb)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + (ta ? "^T" : "") + " x " +
                         shape_str(b.shape()) + (tb ? "^T" : ""));

    Shape out_shape(a.shape().begin(), a.shape().end() - 2);
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < a.rank(); ++i) {
        batch *= a.dim(i);
        if (!shared_b && b.dim(i) != a.dim(i))
            throw ShapeError("matmul: batch dimensions disagree, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    out_shape.push_back(m);
    out_shape.push_back(n);
    auto out = detail::make_result<Real>(out_shape);

    const std::size_t a_step = ar * ac, b_step = shared_b ? 0 : br * bc, c_step = m * n;
    for (std::size_t i = 0; i < batch; ++i) {
        detail::MatMap<Real> c(out->value.data() + i * c_step, m, n);
        detail::ConstMatMap<Real> am(a.data() + i * a_step, ar, ac);
        detail::ConstMatMap<Real> bm(b.data() + i * b_step, br, bc);
        c.setZero();
        detail::gemm_acc<Real>(c, am, ta, bm, tb);
    }

    if (detail::track<Real>({a, b})) {
        auto an = a.node();
        auto bn = b.node();
        detail::connect<Real>(out, {a, b}, [an, bn, ta, tb, batch, a_step, b_step, c_step, ar, ac, br, bc, m,
                                            n](Node<Real>& self) {
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (std::size_t i = 0; i < batch; ++i) {
                detail::ConstMatMap<Real> g(self.grad.data() + i * c_step, m, n);
                detail::ConstMatMap<Real> am(an->value.data() + i * a_step, ar, ac);
                detail::ConstMatMap<Real> bm(bn->value.data() + i * b_step, br, bc);
                if (an->requires_grad) {
                    detail::MatMap<Real> da(an->grad.data() + i * a_step, ar, ac);
                    // dA_logical = g * B_logical^T, stored transposed when ta.
                    if (!ta)
                        detail::gemm_acc<Real>(da, g, false, bm, !tb);
                    else
                        detail::gemm_acc<Real>(da, bm, tb, g, true);
                }
                if (bn->requires_grad) {
                    detail::MatMap<Real> db(bn->grad.data() + i * b_step, br, bc);
                    // dB_logical = A_logical^T * g, stored transposed when tb.
                    if (!tb)
                        detail::gemm_acc<Real>(db, am, !ta, g, false);
                    else
                        detail::gemm_acc<Real>(db, g, true, am, ta);
                }
            }
        });
    }
    return Tensor<Real>(std::move(out));
}

// y = x W + b over the trailing axis. x is [..., in], W is [in, out], b is
// [out] or undefined. The batch collapses into one gemm, which keeps the
// gradient reduction order fixed no matter how many threads Eigen uses.
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b = Tensor<Real>()) {
    if (x.rank() < 1 || w.rank() != 2)
        throw ShapeError("linear: need x[..., in] and w[in, out], got " + shape_str(x.shape()) + " x " +
                         shape_str(w.shape()));
    const std::size_t in = w.dim(0), out_dim = w.dim(1);
    if (x.dim(x.rank() - 1) != in)
        throw ShapeError("linear: trailing dim of " + shape_str(x.shape()) + " must equal " + std::to_string(in));
    if (b.defined() && (b.rank() != 1 || b.dim(0) != out_dim))
        throw ShapeError("linear: bias must be [" + std::to_string(out_dim) + "], got " + shape_str(b.shape()));

    Shape out_shape = x.shape();
    out_shape.back() = out_dim;
    auto out = detail::make_result<Real>(out_shape);
    const std::size_t rows = x.size() / in;

    detail::MatMap<Real> y(out->value.data(), rows, out_dim);
    detail::ConstMatMap<Real> xm(x.data(), rows, in);
    detail::ConstMatMap<Real> wm(w.data(), in, out_dim);
    y.noalias() = xm * wm;
    if (b.defined()) {
        detail::ConstMatMap<Real> bm(b.data(), 1, out_dim);
        y.rowwise() += bm.row(0);
    }

    if (detail::track<Real>({x, w, b})) {
        auto xn = x.node();
        auto wn = w.node();
        auto bn = b.defined() ? b.node() : nullptr;
        detail::connect<Real>(out, {x, w, b}, [xn, wn, bn, rows, in, out_dim](Node<Real>& self) {
            detail::ConstMatMap<Real> g(self.grad.data(), rows, out_dim);
            detail::ConstMatMap<Real> xm(xn->value.data(), rows, in);
            detail::ConstMatMap<Real> wm(wn->value.data(), in, out_dim);
            if (xn->requires_grad) {
                xn->ensure_grad();
                detail::MatMap<Real> dx(xn->grad.data(), rows, in);
                dx.noalias() += g * wm.transpose();
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                detail::MatMap<Real> dw(wn->grad.data(), in, out_dim);
                dw.noalias() += xm.transpose() * g;
            }
            if (bn && bn->requires_grad) {
                bn->ensure_grad();
                // accumulated row by row in fixed order; a vectorized column
                // reduction here can regroup with buffer alignment and break
                // bit reproducibility
                for (std::size_t r = 0; r < rows; ++r) {
                    const Real* gr = self.grad.data() + r * out_dim;
                    for (std::size_t j = 0; j < out_dim; ++j) bn->grad[j] += gr[j];
                }
            }
        });
    }
    return Tensor<Real>(std::move(out));
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x) {
    auto out = detail::make_result<Real>(x.shape());
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = x.data()[i] > Real(0) ? x.data()[i] : Real(0);
    if (detail::track<Real>({x})) {
        auto xn = x.node();
        detail::connect<Real>(out, {x}, [xn](Node<Real>& self) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (xn->value[i] > Real(0)) xn->grad[i] += self.grad[i];
        });
    }
    return Tensor<Real>(std::move(out));
}

// Exact Gaussian-CDF GELU: x * Phi(x). The tanh approximation is not used
// anywhere so reference formulas line up digit for digit.
inline double gelu_cdf(double x) { return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244)); }
inline double gelu_pdf(double x) { return std::exp(-0.5 * x * x) * 0.3989422804014326779; }

template <typename Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
    auto out = detail::make_result<Real>(x.shape());
    for (std::size_t i = 0; i < out->value.size(); ++i) {
        const double v = static_cast<double>(x.data()[i]);
        out->value[i] = static_cast<Real>(v * gelu_cdf(v));
    }
    if (detail::track<Real>({x})) {
        auto xn = x.node();
        detail::connect<Real>(out, {x}, [xn](Node<Real>& self) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double v = static_cast<double>(xn->value[i]);
                xn->grad[i] += self.grad[i] * static_cast<Real>(gelu_cdf(v) + v * gelu_pdf(v));
            }
        });
    }
    return Tensor<Real>(std::move(out));
}

// ---------------------------------------------------------------------------
// Normalizations and softmax
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> softmax_lastdim(const Tensor<Real>& x) {
    if (x.rank() < 1 || x.dim(x.rank() - 1) < 1 || x.size() == 0)
        throw ShapeError("softmax_lastdim: empty tensor " + shape_str(x.shape()));
    const std::size_t d = x.dim(x.rank() - 1);
    const std::size_t rows = x.size() / d;
    auto out = detail::make_result<Real>(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* xi = x.data() + r * d;
        Real* yi = out->value.data() + r * d;
        Real mx = xi[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, xi[j]);
        Real sum = 0;
        for (std::size_t j = 0; j < d; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            sum += yi[j];
        }
        const Real inv = Real(1) / sum;
        for (std::size_t j = 0; j < d; ++j) yi[j] *= inv;
    }
    if (detail::track<Real>({x})) {
        auto xn = x.node();
        detail::connect<Real>(out, {x}, [xn, rows, d](Node<Real>& self) {
            xn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* y = self.value.data() + r * d;
                const Real* g = self.grad.data() + r * d;
                Real dot = 0;
                for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
                Real* dx = xn->grad.data() + r * d;
                for (std::size_t j = 0; j < d; ++j) dx[j] += (g[j] - dot) * y[j];
            }
        });
    }
    return Tensor<Real>(std::move(out));
}

// Per-token normalization over the trailing axis followed by an affine map.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta, Real eps) {
    if (eps <= Real(0)) throw ParamError("layer_norm: eps must be positive");
    const std::size_t d = x.dim(x.rank() - 1);
    if (gamma.size() != d || beta.size() != d)
        throw ShapeError("layer_norm: affine params must have length " + std::to_string(d));
    const std::size_t rows = x.size() / d;
    auto out = detail::make_result<Real>(x.shape());
    std::vector<Real> xhat(x.size());
    std::vector<Real> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* xi = x.data() + r * d;
        Real mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += xi[j];
        mean /= Real(d);
        Real var = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const Real c = xi[j] - mean;
            var += c * c;
        }
        var /= Real(d);
        const Real istd = Real(1) / std::sqrt(var + eps);
        inv_std[r] = istd;
        Real* h = xhat.data() + r * d;
        Real* y = out->value.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            h[j] = (xi[j] - mean) * istd;
            y[j] = h[j] * gamma.data()[j] + beta.data()[j];
        }
    }
    if (detail::track<Real>({x, gamma, beta})) {
        auto xn = x.node();
        auto gn = gamma.node();
        auto bn = beta.node();
        detail::connect<Real>(out, {x, gamma, beta},
                              [xn, gn, bn, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                                  Node<Real>& self) {
                                  if (gn->requires_grad) gn->ensure_grad();
                                  if (bn->requires_grad) bn->ensure_grad();
                                  if (xn->requires_grad) xn->ensure_grad();
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      const Real* g = self.grad.data() + r * d;
                                      const Real* h = xhat.data() + r * d;
                                      if (gn->requires_grad || bn->requires_grad) {
                                          for (std::size_t j = 0; j < d; ++j) {
                                              if (gn->requires_grad) gn->grad[j] += g[j] * h[j];
                                              if (bn->requires_grad) bn->grad[j] += g[j];
                                          }
                                      }
                                      if (xn->requires_grad) {
                                          Real sum_gh = 0, sum_ghh = 0;
                                          for (std::size_t j = 0; j < d; ++j) {
                                              const Real gh = g[j] * gn->value[j];
                                              sum_gh += gh;
                                              sum_ghh += gh * h[j];
                                          }
                                          const Real inv_d = Real(1) / Real(d);
                                          Real* dx = xn->grad.data() + r * d;
                                          for (std::size_t j = 0; j < d; ++j) {
                                              const Real gh = g[j] * gn->value[j];
                                              dx[j] += inv_std[r] * (gh - inv_d * sum_gh - h[j] * inv_d * sum_ghh);
                                          }
                                      }
                                  }
                              });
    }
    return Tensor<Real>(std::move(out));
}

// Running statistics for one BatchNorm site. Learnable affine lives in the
// gamma/beta tensors; the running buffers are plain state.
template <typename Real>
struct BatchNormState {
    std::vector<Real> running_mean;
    std::vector<Real> running_var;
    long batches_seen = 0;
};

// BatchNorm over axis 0 of x[B, F]. Train mode normalizes with batch
// statistics and folds them into the running buffers (unbiased variance, as
// is conventional); eval mode uses the running buffers.
template <typename Real>
Tensor<Real> batch_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        BatchNormState<Real>& state, bool train, Real eps = Real(1e-5),
                        Real momentum = Real(0.1)) {
    if (x.rank() != 2) throw ShapeError("batch_norm: expected [batch, features], got " + shape_str(x.shape()));
    const std::size_t b = x.dim(0), f = x.dim(1);
    if (gamma.size() != f || beta.size() != f)
        throw ShapeError("batch_norm: affine params must have length " + std::to_string(f));
    if (state.running_mean.size() != f) {
        state.running_mean.assign(f, Real(0));
        state.running_var.assign(f, Real(1));
    }
    if (!train && state.batches_seen == 0)
        throw ContractError(
            "batch_norm: eval requested before any statistics were accumulated; run at least one "
            "training batch (or load a trained checkpoint) first");

    auto out = detail::make_result<Real>(x.shape());
    std::vector<Real> mean(f), inv_std(f);
    if (train) {
        for (std::size_t j = 0; j < f; ++j) {
            Real m = 0;
            for (std::size_t i = 0; i < b; ++i) m += x.data()[i * f + j];
            m /= Real(b);
            Real v = 0;
            for (std::size_t i = 0; i < b; ++i) {
                const Real c = x.data()[i * f + j] - m;
                v += c * c;
            }
            v /= Real(b);
            mean[j] = m;
            inv_std[j] = Real(1) / std::sqrt(v + eps);
            const Real unbiased = b > 1 ? v * Real(b) / Real(b - 1) : v;
            state.running_mean[j] = (Real(1) - momentum) * state.running_mean[j] + momentum * m;
            state.running_var[j] = (Real(1) - momentum) * state.running_var[j] + momentum * unbiased;
        }
        state.batches_seen++;
    } else {
        for (std::size_t j = 0; j < f; ++j) {
            mean[j] = state.running_mean[j];
            inv_std[j] = Real(1) / std::sqrt(state.running_var[j] + eps);
        }
    }
    std::vector<Real> xhat(x.size());
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < f; ++j) {
            const Real h = (x.data()[i * f + j] - mean[j]) * inv_std[j];
            xhat[i * f + j] = h;
            out->value[i * f + j] = h * gamma.data()[j] + beta.data()[j];
        }

    if (detail::track<Real>({x, gamma, beta})) {
        auto xn = x.node();
        auto gn = gamma.node();
        auto bn = beta.node();
        detail::connect<Real>(
            out, {x, gamma, beta},
            [xn, gn, bn, b, f, train, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<Real>& self) {
                if (gn->requires_grad) gn->ensure_grad();
                if (bn->requires_grad) bn->ensure_grad();
                if (xn->requires_grad) xn->ensure_grad();
                for (std::size_t j = 0; j < f; ++j) {
                    Real sum_g = 0, sum_gh = 0;
                    for (std::size_t i = 0; i < b; ++i) {
                        const Real g = self.grad[i * f + j];
                        sum_g += g;
                        sum_gh += g * xhat[i * f + j];
                    }
                    if (gn->requires_grad) gn->grad[j] += sum_gh;
                    if (bn->requires_grad) bn->grad[j] += sum_g;
                    if (xn->requires_grad) {
                        const Real gscale = gn->value[j] * inv_std[j];
                        if (train) {
                            const Real inv_b = Real(1) / Real(b);
                            for (std::size_t i = 0; i < b; ++i) {
                                const Real g = self.grad[i * f + j];
                                xn->grad[i * f + j] +=
                                    gscale * (g - inv_b * sum_g - xhat[i * f + j] * inv_b * sum_gh);
                            }
                        } else {
                            for (std::size_t i = 0; i < b; ++i)
                                xn->grad[i * f + j] += gscale * self.grad[i * f + j];
                        }
                    }
                }
            });
    }
    return Tensor<Real>(std::move(out));
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

// Inverted dropout: kept activations scale by 1/(1-rate) at train time, so
// eval is the identity. The mask derives from (seed, element index) and is
// regenerated in backward instead of stored.
template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double rate, std::uint64_t seed, bool train) {
    if (rate < 0.0 || rate >= 1.0) throw ParamError("dropout: rate must be in [0, 1)");
    if (!train || rate == 0.0) return x;
    auto out = detail::make_result<Real>(x.shape());
    const Real keep_scale = Real(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < out->value.size(); ++i)
        out->value[i] = hashed_uniform(seed, i) >= rate ? x.data()[i] * keep_scale : Real(0);
    if (detail::track<Real>({x})) {
        auto xn = x.node();
        detail::connect<Real>(out, {x}, [xn, rate, seed, keep_scale](Node<Real>& self) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (hashed_uniform(seed, i) >= rate) xn->grad[i] += self.grad[i] * keep_scale;
        });
    }
    return Tensor<Real>(std::move(out));
}

// ---------------------------------------------------------------------------
// Multi-head scaled dot-product attention
// ---------------------------------------------------------------------------

struct AttentionProbe {
    double max_row_sum_error = 0.0;
    std::size_t rows_checked = 0;
};

// qkv is [..., T, 3D] (packed projections); returns the concatenated head
// contexts [..., T, D]. Scale is 1/sqrt(D/heads). Ties in nothing, stores the
// attention weights for backward.
template <typename Real>
Tensor<Real> attention(const Tensor<Real>& qkv, std::size_t heads, AttentionProbe* probe = nullptr) {
    if (qkv.rank() < 2) throw ShapeError("attention: need [..., tokens, 3*dim], got " + shape_str(qkv.shape()));
    const std::size_t t = qkv.dim(qkv.rank() - 2);
    const std::size_t packed = qkv.dim(qkv.rank() - 1);
    if (packed % 3 != 0) throw ShapeError("attention: trailing dim must be 3*dim, got " + std::to_string(packed));
    const std::size_t d = packed / 3;
    if (heads == 0 || d % heads != 0)
        throw ShapeError("attention: dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                         " heads");
    const std::size_t dh = d / heads;
    const Real scale = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(dh)));
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < qkv.rank(); ++i) batch *= qkv.dim(i);

    Shape out_shape(qkv.shape());
    out_shape.back() = d;
    auto out = detail::make_result<Real>(out_shape);
    std::vector<Real> attn(batch * heads * t * t);

    using EMat = detail::Mat<Real>;
    const std::size_t in_step = t * packed, out_step = t * d;
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t bi = 0; bi < batch; ++bi) {
        for (std::size_t h = 0; h < heads; ++h) {
            // Strided views of the packed qkv rows for this head.
            using Strided = Eigen::Map<const EMat, Eigen::Unaligned, Eigen::OuterStride<>>;
            const Real* base = qkv.data() + bi * in_step;
            Strided q(base + h * dh, t, dh, Eigen::OuterStride<>(static_cast<Eigen::Index>(packed)));
            Strided k(base + d + h * dh, t, dh, Eigen::OuterStride<>(static_cast<Eigen::Index>(packed)));
            Strided v(base + 2 * d + h * dh, t, dh, Eigen::OuterStride<>(static_cast<Eigen::Index>(packed)));
            EMat scores = (q * k.transpose()) * scale;
            Real* s = attn.data() + (bi * heads + h) * t * t;
            for (std::size_t r = 0; r < t; ++r) {
                Real mx = scores(r, 0);
                for (std::size_t c = 1; c < t; ++c) mx = std::max(mx, scores(r, c));
                Real sum = 0;
                for (std::size_t c = 0; c < t; ++c) {
                    const Real e = std::exp(scores(r, c) - mx);
                    s[r * t + c] = e;
                    sum += e;
                }
                const Real inv = Real(1) / sum;
                for (std::size_t c = 0; c < t; ++c) s[r * t + c] *= inv;
            }
            detail::ConstMatMap<Real> sm(s, t, t);
            Eigen::Map<EMat, Eigen::Unaligned, Eigen::OuterStride<>> ctx(
                out->value.data() + bi * out_step + h * dh, t, dh,
                Eigen::OuterStride<>(static_cast<Eigen::Index>(d)));
            ctx.noalias() = sm * v;
        }
    }
    if (probe) {
        for (std::size_t r = 0; r < batch * heads * t; ++r) {
            Real sum = 0;
            for (std::size_t c = 0; c < t; ++c) sum += attn[r * t + c];
            probe->max_row_sum_error = std::max(probe->max_row_sum_error, std::abs(static_cast<double>(sum) - 1.0));
        }
        probe->rows_checked += batch * heads * t;
    }

    if (detail::track<Real>({qkv})) {
        auto xn = qkv.node();
        detail::connect<Real>(
            out, {qkv},
            [xn, batch, heads, t, d, dh, packed, scale, in_step, out_step, attn = std::move(attn)](Node<Real>& self) {
                xn->ensure_grad();
#pragma omp parallel for collapse(2) schedule(static)
                for (std::size_t bi = 0; bi < batch; ++bi) {
                    for (std::size_t h = 0; h < heads; ++h) {
                        using EMat = detail::Mat<Real>;
                        using Strided = Eigen::Map<const EMat, Eigen::Unaligned, Eigen::OuterStride<>>;
                        using StridedMut = Eigen::Map<EMat, Eigen::Unaligned, Eigen::OuterStride<>>;
                        const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(packed));
                        const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(d));
                        const Real* base = xn->value.data() + bi * in_step;
                        Real* gbase = xn->grad.data() + bi * in_step;
                        Strided q(base + h * dh, t, dh, in_stride);
                        Strided k(base + d + h * dh, t, dh, in_stride);
                        Strided v(base + 2 * d + h * dh, t, dh, in_stride);
                        StridedMut dq(gbase + h * dh, t, dh, in_stride);
                        StridedMut dk(gbase + d + h * dh, t, dh, in_stride);
                        StridedMut dv(gbase + 2 * d + h * dh, t, dh, in_stride);
                        Strided dctx(self.grad.data() + bi * out_step + h * dh, t, dh, out_stride);
                        detail::ConstMatMap<Real> sm(attn.data() + (bi * heads + h) * t * t, t, t);

                        EMat ds = dctx * v.transpose();          // [t, t]
                        dv.noalias() += sm.transpose() * dctx;   // [t, dh]
                        // softmax backward per row, then undo the scale
                        for (std::size_t r = 0; r < t; ++r) {
                            Real dot = 0;
                            for (std::size_t c = 0; c < t; ++c) dot += ds(r, c) * sm(r, c);
                            for (std::size_t c = 0; c < t; ++c) ds(r, c) = (ds(r, c) - dot) * sm(r, c) * scale;
                        }
                        dq.noalias() += ds * k;
                        dk.noalias() += ds.transpose() * q;
                    }
                }
            });
    }
    return Tensor<Real>(std::move(out));
}

// ---------------------------------------------------------------------------
// Reductions and pooling
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
    Real s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i];
    auto out = detail::make_result<Real>({1});
    out->value[0] = s;
    if (detail::track<Real>({x})) {
        auto xn = x.node();
        detail::connect<Real>(out, {x}, [xn](Node<Real>& self) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += self.grad[0];
        });
    }
    return Tensor<Real>(std::move(out));
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x) {
    auto out = sum(x);
    return scale(out, Real(1) / Real(x.size()));
}

// Sequence pooling: [.., T, D] -> [.., 2D] as [max over tokens ; mean over
// tokens]. Max ties resolve to the lowest token index.
template <typename Real>
Tensor<Real> pool_max_mean(const Tensor<Real>& x) {
    if (x.rank() < 2) throw ShapeError("pool_max_mean: need [..., tokens, dim], got " + shape_str(x.shape()));
    const std::size_t t = x.dim(x.rank() - 2), d = x.dim(x.rank() - 1);
    if (t == 0 || d == 0) throw ShapeError("pool_max_mean: empty sequence " + shape_str(x.shape()));
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < x.rank(); ++i) batch *= x.dim(i);
    Shape out_shape(x.shape().begin(), x.shape().end() - 2);
    out_shape.push_back(2 * d);
    auto out = detail::make_result<Real>(out_shape);
    std::vector<std::uint32_t> argmax(batch * d);
    const Real inv_t = Real(1) / Real(t);
    for (std::size_t b = 0; b < batch; ++b) {
        const Real* xb = x.data() + b * t * d;
        Real* yb = out->value.data() + b * 2 * d;
        for (std::size_t j = 0; j < d; ++j) {
            Real mx = xb[j];
            std::uint32_t arg = 0;
            Real s = xb[j];
            for (std::size_t r = 1; r < t; ++r) {
                const Real v = xb[r * d + j];
                s += v;
                if (v > mx) {
                    mx = v;
                    arg = static_cast<std::uint32_t>(r);
                }
            }
            yb[j] = mx;
            yb[d + j] = s * inv_t;
            argmax[b * d + j] = arg;
        }
    }
    if (detail::track<Real>({x})) {
        auto xn = x.node();
        detail::connect<Real>(out, {x}, [xn, batch, t, d, inv_t, argmax = std::move(argmax)](Node<Real>& self) {
            xn->ensure_grad();
            for (std::size_t b = 0; b < batch; ++b) {
                const Real* g = self.grad.data() + b * 2 * d;
                Real* dx = xn->grad.data() + b * t * d;
                for (std::size_t j = 0; j < d; ++j) {
                    dx[argmax[b * d + j] * d + j] += g[j];
                    const Real gm = g[d + j] * inv_t;
                    for (std::size_t r = 0; r < t; ++r) dx[r * d + j] += gm;
                }
            }
        });
    }
    return Tensor<Real>(std::move(out));
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean cross-entropy of row-wise softmax(logits) against integer labels.
template <typename Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [batch, classes]");
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    if (labels.size() != b) throw ShapeError("cross_entropy: got " + std::to_string(labels.size()) + " labels for batch " + std::to_string(b));
    for (std::size_t i = 0; i < b; ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
            throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");
    auto out = detail::make_result<Real>({1});
    std::vector<Real> probs(b * c);
    double total = 0;
    for (std::size_t i = 0; i < b; ++i) {
        const Real* row = logits.data() + i * c;
        Real mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0;
        for (std::size_t j = 0; j < c; ++j) {
            probs[i * c + j] = std::exp(row[j] - mx);
            sum += static_cast<double>(probs[i * c + j]);
        }
        const Real inv = Real(1.0 / sum);
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] *= inv;
        total -= std::log(std::max(static_cast<double>(probs[i * c + labels[i]]), 1e-300));
    }
    out->value[0] = static_cast<Real>(total / static_cast<double>(b));
    if (detail::track<Real>({logits})) {
        auto xn = logits.node();
        detail::connect<Real>(out, {logits}, [xn, b, c, labels, probs = std::move(probs)](Node<Real>& self) {
            xn->ensure_grad();
            const Real g = self.grad[0] / Real(b);
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    xn->grad[i * c + j] +=
                        g * (probs[i * c + j] - (static_cast<std::size_t>(labels[i]) == j ? Real(1) : Real(0)));
        });
    }
    return Tensor<Real>(std::move(out));
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// Fills grad on every requires_grad leaf reachable from `loss` with
// d loss / d leaf. Leaf gradients accumulate across calls until zeroed.
template <typename Real>
void backward(const Tensor<Real>& loss) {
    if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    auto root = loss.node();
    if (!root->requires_grad)
        throw ContractError("backward: graph is detached; no tensor on the path requires gradients");

    // Post-order over parents, iterative. Reversed, every node sees its full
    // incoming gradient before its own backward runs.
    std::vector<Node<Real>*> order;
    std::unordered_set<Node<Real>*> visited;
    std::vector<std::pair<Node<Real>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<Real>* next = node->parents[idx++].get();
            if (next->requires_grad && visited.insert(next).second) stack.emplace_back(next, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<Real>* node = *it;
        if (node->backward_fn && node->grad.size() == node->value.size()) node->backward_fn(*node);
        if (!node->leaf) {
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient verification harness
// ---------------------------------------------------------------------------

// Compares reverse-mode gradients of a scalar-valued function against central
// differences. Returns max_i |analytic_i - fd_i| / max(1, |analytic_i|).
// Double precision only; `f` must rebuild its graph on every call.
template <typename F>
double grad_check(F&& f, Tensor<double>& x, double h = 1e-5) {
    if (h <= 0) throw ParamError("grad_check: step must be positive");
    x.set_requires_grad(true);
    x.zero_grad();
    Tensor<double> loss = f(x);
    if (loss.size() != 1) throw ContractError("grad_check: function must be scalar-valued");
    backward(loss);
    std::vector<double> analytic = x.grad();

    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x.data()[i];
        double plus, minus;
        {
            NoGradGuard ng;
            x.data()[i] = saved + h;
            plus = f(x).item();
            x.data()[i] = saved - h;
            minus = f(x).item();
        }
        x.data()[i] = saved;
        const double fd = (plus - minus) / (2.0 * h);
        const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace vip
