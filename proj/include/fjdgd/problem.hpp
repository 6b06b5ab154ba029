#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "fjdgd/errors.hpp"
#include "fjdgd/objectives.hpp"
#include "fjdgd/rng.hpp"

// A Problem bundles everything the iterates need: per-agent losses and
// gradients, datasets for the accuracy metrics, and aggregated convexity
// constants. Three kinds: binary logistic, multi-class logistic, and
// diagonal quadratics (the theory-oracle workhorse; closed-form optima).

namespace fjdgd {

enum class TaskKind { binary, multiclass, quadratic };

struct Problem {
    TaskKind kind = TaskKind::binary;
    double gamma = 0.0;
    int n_agents = 0;
    Eigen::Index dim = 0;     // p
    Eigen::Index classes = 1; // parameter columns: 1 for binary/quadratic

    // Logistic tasks.
    std::vector<AgentDataset> train;
    std::vector<AgentDataset> test;

    // Quadratic task: f_i(x) = 1/2 sum_k h(k,i) (x_k - c(k,i))^2.
    Eigen::MatrixXd quad_h; // dim x N, all entries > 0
    Eigen::MatrixXd quad_c; // dim x N

    ParamBlock zero_params() const { return ParamBlock::Zero(dim, classes); }

    double local_loss(int i, const ParamBlock& x) const {
        switch (kind) {
        case TaskKind::binary: return binary_logistic_loss(x, train[static_cast<std::size_t>(i)], gamma);
        case TaskKind::multiclass: return multiclass_logistic_loss(x, train[static_cast<std::size_t>(i)], gamma);
        case TaskKind::quadratic: {
            Eigen::ArrayXd d = x.col(0).array() - quad_c.col(i).array();
            return 0.5 * (quad_h.col(i).array() * d * d).sum();
        }
        }
        return 0.0;
    }

    ParamBlock local_gradient(int i, const ParamBlock& x) const {
        switch (kind) {
        case TaskKind::binary: return binary_logistic_gradient(x, train[static_cast<std::size_t>(i)], gamma);
        case TaskKind::multiclass: return multiclass_logistic_gradient(x, train[static_cast<std::size_t>(i)], gamma);
        case TaskKind::quadratic:
            return (quad_h.col(i).array() * (x.col(0).array() - quad_c.col(i).array())).matrix();
        }
        return {};
    }

    // Worst-case constants across agents: mu = min_i mu_i, L = max_i L_i,
    // so one step size certifies every local loss.
    ConvexityConstants constants() const {
        if (kind == TaskKind::quadratic)
            return {quad_h.minCoeff(), quad_h.maxCoeff()};
        ConvexityConstants agg{std::numeric_limits<double>::infinity(), 0.0};
        Task t = kind == TaskKind::binary ? Task::binary : Task::multiclass;
        for (const auto& d : train) {
            ConvexityConstants k = convexity_constants(d, gamma, t);
            agg.mu = std::min(agg.mu, k.mu);
            agg.big_l = std::max(agg.big_l, k.big_l);
        }
        return agg;
    }

    bool has_accuracy() const { return kind != TaskKind::quadratic; }
};

// Random diagonal quadratics: curvatures uniform in [curv_min, curv_max],
// centers N(0, center_scale^2). Strongly convex by construction.
inline Problem make_quadratic_problem(int n_agents, int dim, double curv_min, double curv_max,
                                      double center_scale, std::uint64_t seed) {
    if (n_agents < 1 || dim < 1)
        throw ConfigError("quadratic problem needs n_agents >= 1 and dim >= 1");
    if (!(curv_min > 0.0) || curv_max < curv_min)
        throw ConfigError("quadratic curvatures need 0 < curv_min <= curv_max");
    Problem pr;
    pr.kind = TaskKind::quadratic;
    pr.n_agents = n_agents;
    pr.dim = dim;
    pr.classes = 1;
    pr.quad_h.resize(dim, n_agents);
    pr.quad_c.resize(dim, n_agents);
    for (int i = 0; i < n_agents; ++i) {
        Rng rng(derive_seed(seed, {0x0ADu, static_cast<std::uint64_t>(i)}));
        for (Eigen::Index k = 0; k < dim; ++k) {
            pr.quad_h(k, i) = rng.next_uniform(curv_min, curv_max);
            pr.quad_c(k, i) = rng.next_normal(0.0, center_scale);
        }
    }
    return pr;
}

inline Problem make_logistic_problem(TaskKind kind, std::vector<AgentDataset> train,
                                     std::vector<AgentDataset> test, double gamma) {
    if (kind == TaskKind::quadratic)
        throw ContractError("use make_quadratic_problem for quadratics");
    if (train.empty() || train.size() != test.size())
        throw ContractError("need one train and one test set per agent");
    Problem pr;
    pr.kind = kind;
    pr.gamma = gamma;
    pr.n_agents = static_cast<int>(train.size());
    pr.dim = train[0].p();
    if (kind == TaskKind::multiclass) {
        int max_label = 0;
        for (const auto& d : train) max_label = std::max(max_label, d.labels.maxCoeff());
        for (const auto& d : test) max_label = std::max(max_label, d.labels.maxCoeff());
        pr.classes = std::max(2, max_label + 1);
    } else {
        pr.classes = 1;
    }
    for (const auto& d : train)
        if (d.p() != pr.dim) throw ContractError("agents disagree on feature dimension");
    for (const auto& d : test)
        if (d.p() != pr.dim) throw ContractError("agents disagree on feature dimension");
    pr.train = std::move(train);
    pr.test = std::move(test);
    return pr;
}

} // namespace fjdgd
