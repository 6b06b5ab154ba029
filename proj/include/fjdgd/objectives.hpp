#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "fjdgd/errors.hpp"

// Regularized logistic-regression objectives (binary and multi-class), their
// gradients, prediction rules, and the strong-convexity/smoothness constants
// the step-size and rate formulas need.
//
// The regularizer is gamma * ||x||^2 (squared norm): the loss must be
// strongly convex and smooth everywhere for the linear-rate theory to apply,
// and the plain norm is neither at 0.

namespace fjdgd {

enum class Split { train, test };

// One agent's private data. Binary labels are -1/+1, multi-class labels are
// 0..c-1. Features are rows of `features`.
struct AgentDataset {
    Eigen::MatrixXd features; // m x p
    Eigen::VectorXi labels;   // m
    Split split = Split::train;

    Eigen::Index m() const { return features.rows(); }
    Eigen::Index p() const { return features.cols(); }
};

// One agent's parameters: p x 1 for binary tasks, p x c for multi-class.
using ParamBlock = Eigen::MatrixXd;

struct ConvexityConstants {
    double mu = 0.0;    // strong convexity
    double big_l = 0.0; // smoothness
};

enum class Task { binary, multiclass };

namespace detail {

inline void check_dataset(const AgentDataset& d) {
    if (d.m() == 0)
        throw DataError("dataset is empty");
    if (d.labels.size() != d.m())
        throw ContractError("dataset has " + std::to_string(d.m()) + " feature rows but " +
                            std::to_string(d.labels.size()) + " labels");
}

inline void check_binary_shapes(const ParamBlock& x, const AgentDataset& d) {
    check_dataset(d);
    if (x.cols() != 1 || x.rows() != d.p())
        throw ContractError("binary params must be " + std::to_string(d.p()) + "x1, got " +
                            std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
}

inline void check_multiclass_shapes(const ParamBlock& x, const AgentDataset& d) {
    check_dataset(d);
    if (x.rows() != d.p() || x.cols() < 2)
        throw ContractError("multiclass params must be " + std::to_string(d.p()) +
                            "xC with C>=2, got " + std::to_string(x.rows()) + "x" +
                            std::to_string(x.cols()));
    for (Eigen::Index j = 0; j < d.m(); ++j)
        if (d.labels(j) < 0 || d.labels(j) >= x.cols())
            throw DataError("label " + std::to_string(d.labels(j)) + " out of range for " +
                            std::to_string(x.cols()) + " classes");
}

// log(1 + exp(-t)) without overflow for large |t|.
inline double log1p_exp_neg(double t) {
    if (t > 0) return std::log1p(std::exp(-t));
    return -t + std::log1p(std::exp(t));
}

} // namespace detail

// (1/m) sum_j log(1 + exp(-b_j a_j' x)) + gamma ||x||^2
inline double binary_logistic_loss(const ParamBlock& x, const AgentDataset& d, double gamma) {
    detail::check_binary_shapes(x, d);
    Eigen::ArrayXd t = (d.features * x).array() * d.labels.cast<double>().array();
    double acc = 0.0;
    for (Eigen::Index j = 0; j < t.size(); ++j)
        acc += detail::log1p_exp_neg(t(j));
    return acc / static_cast<double>(d.m()) + gamma * x.squaredNorm();
}

inline ParamBlock binary_logistic_gradient(const ParamBlock& x, const AgentDataset& d,
                                           double gamma) {
    detail::check_binary_shapes(x, d);
    Eigen::ArrayXd b = d.labels.cast<double>().array();
    Eigen::ArrayXd t = (d.features * x).array() * b;
    // d/dt log(1+exp(-t)) = -sigma(-t); overflow-safe via the t-sign split.
    Eigen::ArrayXd s(t.size());
    for (Eigen::Index j = 0; j < t.size(); ++j) {
        double e = std::exp(-std::abs(t(j)));
        s(j) = t(j) >= 0 ? e / (1.0 + e) : 1.0 / (1.0 + e);
    }
    Eigen::VectorXd w = (-b * s).matrix();
    return d.features.transpose() * w / static_cast<double>(d.m()) + 2.0 * gamma * x;
}

// (1/m) sum_j [logsumexp(a_j' X) - (a_j' X)_{label_j}] + gamma ||X||_F^2
inline double multiclass_logistic_loss(const ParamBlock& x, const AgentDataset& d, double gamma) {
    detail::check_multiclass_shapes(x, d);
    Eigen::MatrixXd z = d.features * x; // m x c logits
    double acc = 0.0;
    for (Eigen::Index j = 0; j < z.rows(); ++j) {
        double zmax = z.row(j).maxCoeff();
        double lse = zmax + std::log((z.row(j).array() - zmax).exp().sum());
        acc += lse - z(j, d.labels(j));
    }
    return acc / static_cast<double>(d.m()) + gamma * x.squaredNorm();
}

inline ParamBlock multiclass_logistic_gradient(const ParamBlock& x, const AgentDataset& d,
                                               double gamma) {
    detail::check_multiclass_shapes(x, d);
    Eigen::MatrixXd z = d.features * x;
    for (Eigen::Index j = 0; j < z.rows(); ++j) {
        double zmax = z.row(j).maxCoeff();
        Eigen::ArrayXd e = (z.row(j).array() - zmax).exp();
        z.row(j) = (e / e.sum()).matrix();   // softmax probabilities in place
        z(j, d.labels(j)) -= 1.0;            // minus one-hot
    }
    return d.features.transpose() * z / static_cast<double>(d.m()) + 2.0 * gamma * x;
}

// +1 iff a'x > 0, -1 otherwise (the decision boundary itself maps to -1).
inline int predict_binary(const ParamBlock& x, const Eigen::VectorXd& a) {
    if (x.cols() != 1 || x.rows() != a.size())
        throw ContractError("predict_binary: params and feature vector disagree");
    return (a.dot(x.col(0)) > 0.0) ? +1 : -1;
}

// argmax of the softmax logits; ties go to the lowest class index.
inline int predict_multiclass(const ParamBlock& x, const Eigen::VectorXd& a) {
    if (x.rows() != a.size() || x.cols() < 2)
        throw ContractError("predict_multiclass: params and feature vector disagree");
    Eigen::Index best = 0;
    (a.transpose() * x).maxCoeff(&best);
    return static_cast<int>(best);
}

// 1 - misclassified/m. Task is inferred from the parameter shape.
inline double accuracy(const ParamBlock& x, const AgentDataset& d) {
    detail::check_dataset(d);
    Eigen::Index correct = 0;
    if (x.cols() == 1) {
        Eigen::VectorXd score = d.features * x;
        for (Eigen::Index j = 0; j < d.m(); ++j) {
            int pred = score(j) > 0.0 ? +1 : -1;
            if (pred == d.labels(j)) ++correct;
        }
    } else {
        Eigen::MatrixXd z = d.features * x;
        for (Eigen::Index j = 0; j < d.m(); ++j) {
            Eigen::Index best = 0;
            z.row(j).maxCoeff(&best);
            if (static_cast<int>(best) == d.labels(j)) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(d.m());
}

// mu = 2*gamma from the squared-norm regularizer. L adds the standard
// logistic Hessian bound: lam_max(A'A)/(4m) for binary (sigmoid' <= 1/4),
// lam_max(A'A)/(2m) for multi-class (softmax Jacobian <= 1/2).
inline ConvexityConstants convexity_constants(const AgentDataset& d, double gamma, Task task) {
    detail::check_dataset(d);
    if (gamma <= 0.0)
        throw ConfigError("gamma must be positive for a strongly convex objective");
    Eigen::MatrixXd gram = d.features.transpose() * d.features;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
    double lam_max = std::max(0.0, solver.eigenvalues().maxCoeff());
    double denom = (task == Task::binary) ? 4.0 : 2.0;
    ConvexityConstants k;
    k.mu = 2.0 * gamma;
    k.big_l = 2.0 * gamma + lam_max / (denom * static_cast<double>(d.m()));
    return k;
}

} // namespace fjdgd
