// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0

#include "vipformer/eval.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>

#include "vipformer/errors.hpp"

namespace vip {

namespace {

using DMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

DMat gather_rows(const std::vector<double>& features, std::size_t dim, const std::vector<std::size_t>& rows) {
    DMat out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < dim; ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            features[rows[i] * dim + j];
    return out;
}

}  // namespace

double linear_probe(const std::vector<double>& features, std::size_t dim, const std::vector<int>& labels,
                    const std::vector<std::size_t>& train_rows, const std::vector<std::size_t>& test_rows,
                    int num_classes, const ProbeOptions& opt) {
    if (dim == 0 || features.size() % dim != 0) throw ShapeError("linear_probe: features not a multiple of dim");
    if (train_rows.empty() || test_rows.empty()) throw ContractError("linear_probe: empty train or test split");
    if (num_classes < 2) throw ContractError("linear_probe: need at least 2 classes");
    {
        std::set<int> seen;
        for (std::size_t r : train_rows) seen.insert(labels.at(r));
        if (seen.size() < 2) throw ContractError("linear_probe: training split contains a single class");
    }

    DMat xtr = gather_rows(features, dim, train_rows);
    DMat xte = gather_rows(features, dim, test_rows);
    const Eigen::Index n = xtr.rows(), d = static_cast<Eigen::Index>(dim), c = num_classes;

    // Whiten with train statistics (ridge-regularized covariance).
    Eigen::RowVectorXd mean = xtr.colwise().mean();
    xtr.rowwise() -= mean;
    xte.rowwise() -= mean;
    Eigen::MatrixXd cov = (xtr.transpose() * xtr) / static_cast<double>(n);
    const double ridge = 1e-4 * cov.trace() / static_cast<double>(d) + 1e-12;
    cov.diagonal().array() += ridge;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    Eigen::MatrixXd whiten =
        eig.eigenvectors() * eig.eigenvalues().cwiseMax(1e-12).cwiseSqrt().cwiseInverse().asDiagonal() *
        eig.eigenvectors().transpose();
    DMat ztr = xtr * whiten;
    DMat zte = xte * whiten;

    // Linear classifier, full-batch gradient descent with momentum.
    DMat w = DMat::Zero(d, c);
    Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(c);
    DMat w_vel = DMat::Zero(d, c);
    Eigen::RowVectorXd b_vel = Eigen::RowVectorXd::Zero(c);
    const double momentum = 0.9;
    const double inv_n = 1.0 / static_cast<double>(n);

    std::vector<int> ytr(train_rows.size());
    for (std::size_t i = 0; i < train_rows.size(); ++i) {
        ytr[i] = labels.at(train_rows[i]);
        if (ytr[i] < 0 || ytr[i] >= num_classes)
            throw DataError("linear_probe: label " + std::to_string(ytr[i]) + " outside [0, " +
                            std::to_string(num_classes) + ")");
    }

    for (int it = 0; it < opt.iters; ++it) {
        DMat scores = ztr * w;
        scores.rowwise() += b;
        DMat grad_scores(n, c);
        if (!opt.hinge) {
            for (Eigen::Index i = 0; i < n; ++i) {
                const double mx = scores.row(i).maxCoeff();
                double z = 0;
                for (Eigen::Index j = 0; j < c; ++j) z += std::exp(scores(i, j) - mx);
                for (Eigen::Index j = 0; j < c; ++j) grad_scores(i, j) = std::exp(scores(i, j) - mx) / z;
                grad_scores(i, ytr[static_cast<std::size_t>(i)]) -= 1.0;
            }
        } else {
            // One-vs-rest squared hinge with +-1 targets.
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < c; ++j) {
                    const double target = (j == ytr[static_cast<std::size_t>(i)]) ? 1.0 : -1.0;
                    const double margin = 1.0 - target * scores(i, j);
                    grad_scores(i, j) = margin > 0 ? -2.0 * margin * target : 0.0;
                }
        }
        DMat gw = ztr.transpose() * grad_scores * inv_n + opt.weight_decay * w;
        Eigen::RowVectorXd gb = grad_scores.colwise().sum() * inv_n;
        w_vel = momentum * w_vel - opt.lr * gw;
        b_vel = momentum * b_vel - opt.lr * gb;
        w += w_vel;
        b += b_vel;
    }

    DMat test_scores = zte * w;
    test_scores.rowwise() += b;
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < test_scores.rows(); ++i) {
        Eigen::Index arg = 0;
        test_scores.row(i).maxCoeff(&arg);
        if (static_cast<int>(arg) == labels.at(test_rows[static_cast<std::size_t>(i)])) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test_rows.size());
}

FewShotResult fewshot_episodes(const std::vector<double>& features, std::size_t dim, const std::vector<int>& labels,
                               const FewShotSpec& spec, RngStream rng, const ProbeOptions& opt) {
    spec.validate();
    if (dim == 0 || features.size() != labels.size() * dim)
        throw ShapeError("fewshot_episodes: features/labels size mismatch");

    // Classes with enough samples for one episode, ordered by first
    // occurrence so episode draws do not depend on the label values
    // themselves (bijective relabeling leaves the episodes unchanged).
    std::vector<std::vector<std::size_t>> by_class;
    std::vector<int> first_seen;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) throw DataError("fewshot_episodes: negative label");
        if (static_cast<std::size_t>(labels[i]) >= by_class.size()) by_class.resize(labels[i] + 1);
        if (by_class[static_cast<std::size_t>(labels[i])].empty()) first_seen.push_back(labels[i]);
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    const std::size_t need = static_cast<std::size_t>(spec.k_shot + spec.query_per_class);
    std::vector<int> eligible;
    for (int c : first_seen)
        if (by_class[static_cast<std::size_t>(c)].size() >= need) eligible.push_back(c);
    if (eligible.size() < static_cast<std::size_t>(spec.n_way))
        throw ParamError("fewshot: only " + std::to_string(eligible.size()) + " classes have >= " +
                         std::to_string(need) + " samples, need " + std::to_string(spec.n_way) + " ways");

    FewShotResult result;
    for (int run = 0; run < spec.runs; ++run) {
        RngStream ep = rng.fork(static_cast<std::uint64_t>(run));
        std::vector<int> classes = eligible;
        ep.fork(0).shuffle(classes);
        classes.resize(static_cast<std::size_t>(spec.n_way));

        std::vector<std::size_t> train_rows, test_rows;
        std::vector<int> episode_labels(labels.size(), 0);
        for (int way = 0; way < spec.n_way; ++way) {
            auto pool = by_class[static_cast<std::size_t>(classes[static_cast<std::size_t>(way)])];
            ep.fork(static_cast<std::uint64_t>(way) + 1).shuffle(pool);
            for (int s = 0; s < spec.k_shot; ++s) train_rows.push_back(pool[static_cast<std::size_t>(s)]);
            for (int q = 0; q < spec.query_per_class; ++q)
                test_rows.push_back(pool[static_cast<std::size_t>(spec.k_shot + q)]);
            for (std::size_t s = 0; s < need; ++s) episode_labels[pool[s]] = way;
        }
        result.run_accuracies.push_back(
            linear_probe(features, dim, episode_labels, train_rows, test_rows, spec.n_way, opt));
    }

    double sum = 0;
    for (double a : result.run_accuracies) sum += a;
    result.mean = sum / static_cast<double>(result.run_accuracies.size());
    if (result.run_accuracies.size() > 1) {
        double sq = 0;
        for (double a : result.run_accuracies) sq += (a - result.mean) * (a - result.mean);
        result.stddev = std::sqrt(sq / static_cast<double>(result.run_accuracies.size() - 1));
    }
    return result;
}

}  // namespace vip
