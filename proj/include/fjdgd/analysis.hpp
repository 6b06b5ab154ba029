#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "fjdgd/engine.hpp"
#include "fjdgd/errors.hpp"
#include "fjdgd/problem.hpp"
#include "fjdgd/topology.hpp"

// Theory oracles: the contraction-rate certificate, the four fixed points
// (centralized optimum, local optima, DGD fixed point, and their stubborn
// convex combination), the heterogeneity constants from the suboptimality
// bound, the noise envelope, and trace summary statistics.

namespace fjdgd {

struct RateCertificate {
    double zeta = 0.0;
    double alpha = 0.0;
    double mu = 0.0;
    double big_l = 0.0;
    double lambda_min_w = 0.0;
    bool convergent = false; // zeta < 1
};

// zeta = max{|1 - alpha*mu|, |1 - alpha*L|, |lambda_min(W) - alpha*L|}
inline RateCertificate convergence_rate(double alpha, const ConvexityConstants& k,
                                        double lambda_min_w) {
    if (!(alpha >= 0.0)) throw ConfigError("rate certificate needs alpha >= 0");
    RateCertificate c;
    c.alpha = alpha;
    c.mu = k.mu;
    c.big_l = k.big_l;
    c.lambda_min_w = lambda_min_w;
    c.zeta = std::max({std::abs(1.0 - alpha * k.mu), std::abs(1.0 - alpha * k.big_l),
                       std::abs(lambda_min_w - alpha * k.big_l)});
    c.convergent = c.zeta < 1.0;
    return c;
}

// The step size that minimizes zeta: equalizes |1 - alpha*mu| and
// |lambda_min(W) - alpha*L|, giving zeta = (L - mu*lambda_min)/(mu + L) < 1
// for every connected graph. This is what alpha = "auto" resolves to.
inline double auto_alpha(const ConvexityConstants& k, double lambda_min_w) {
    return (1.0 + lambda_min_w) / (k.mu + k.big_l);
}

namespace detail {

template <typename GradFn>
ParamBlock gd_minimize(const GradFn& grad, double big_l, ParamBlock x, double tol,
                       long max_iter, const char* what) {
    const double step = 1.0 / big_l;
    for (long k = 0; k < max_iter; ++k) {
        ParamBlock g = grad(x);
        if (g.norm() <= tol) return x;
        x -= step * g;
    }
    throw Error(std::string(what) + " oracle did not reach gradient norm " +
                std::to_string(tol) + " within " + std::to_string(max_iter) + " iterations");
}

} // namespace detail

// x* = argmin sum_i f_i(x), by gradient descent to gradient norm <= tol.
inline ParamBlock centralized_optimum(const Problem& pr, double tol = 1e-10,
                                      long max_iter = 2000000) {
    double l_sum = 0.0;
    if (pr.kind == TaskKind::quadratic) {
        for (int i = 0; i < pr.n_agents; ++i) l_sum += pr.quad_h.col(i).maxCoeff();
    } else {
        Task t = pr.kind == TaskKind::binary ? Task::binary : Task::multiclass;
        for (const auto& d : pr.train) l_sum += convexity_constants(d, pr.gamma, t).big_l;
    }
    auto grad = [&](const ParamBlock& x) {
        ParamBlock g = pr.local_gradient(0, x);
        for (int i = 1; i < pr.n_agents; ++i) g += pr.local_gradient(i, x);
        return g;
    };
    return detail::gd_minimize(grad, l_sum, pr.zero_params(), tol, max_iter, "centralized optimum");
}

// x_i* = argmin f_i(x) for every agent.
inline std::vector<ParamBlock> local_optima(const Problem& pr, double tol = 1e-10,
                                            long max_iter = 2000000) {
    std::vector<ParamBlock> out(static_cast<std::size_t>(pr.n_agents));
    for (int i = 0; i < pr.n_agents; ++i) {
        double li;
        if (pr.kind == TaskKind::quadratic) {
            li = pr.quad_h.col(i).maxCoeff();
        } else {
            Task t = pr.kind == TaskKind::binary ? Task::binary : Task::multiclass;
            li = convexity_constants(pr.train[static_cast<std::size_t>(i)], pr.gamma, t).big_l;
        }
        auto grad = [&](const ParamBlock& x) { return pr.local_gradient(i, x); };
        out[static_cast<std::size_t>(i)] =
            detail::gd_minimize(grad, li, pr.zero_params(), tol, max_iter, "local optimum");
    }
    return out;
}

// Fixed point of x <- Wx - alpha*grad f(x), found by iterating the map until
// the update is below 1e-12*(1 + ||x||). Refuses non-contractive settings.
inline std::vector<ParamBlock> dgd_fixed_point(const Problem& pr, const Graph& g,
                                               const MixingMatrix& w, double alpha,
                                               long max_iter = 5000000) {
    RateCertificate cert = convergence_rate(alpha, pr.constants(), min_eigenvalue(w));
    if (!cert.convergent)
        throw Error("dgd_fixed_point: zeta = " + std::to_string(cert.zeta) +
                    " >= 1, the map is not a contraction at alpha = " + std::to_string(alpha));
    std::vector<ParamBlock> x(static_cast<std::size_t>(pr.n_agents), pr.zero_params());
    std::vector<ParamBlock> next(x.size());
    for (long k = 0; k < max_iter; ++k) {
        double move2 = 0.0, norm2 = 0.0;
        for (int i = 0; i < pr.n_agents; ++i) {
            auto ui = static_cast<std::size_t>(i);
            next[ui] = detail::mix(x, g, w, i) - alpha * pr.local_gradient(i, x[ui]);
            move2 += (next[ui] - x[ui]).squaredNorm();
            norm2 += x[ui].squaredNorm();
        }
        x.swap(next);
        if (std::sqrt(move2) <= 1e-12 * (1.0 + std::sqrt(norm2))) return x;
    }
    throw Error("dgd_fixed_point did not converge within " + std::to_string(max_iter) +
                " iterations");
}

// x_hat_i = lambda_i * x_i^* + (1 - lambda_i) * x_bar_i (endpoint-exact).
inline std::vector<ParamBlock> fj_fixed_point(const Eigen::VectorXd& lambdas,
                                              const std::vector<ParamBlock>& x_star_local,
                                              const std::vector<ParamBlock>& x_bar) {
    if (x_star_local.size() != x_bar.size() ||
        lambdas.size() != static_cast<Eigen::Index>(x_bar.size()))
        throw ContractError("fj_fixed_point: mismatched agent counts");
    std::vector<ParamBlock> out(x_bar.size());
    for (std::size_t i = 0; i < x_bar.size(); ++i)
        out[i] = detail::combine(lambdas(static_cast<Eigen::Index>(i)), x_star_local[i], x_bar[i]);
    return out;
}

struct FixedPointReport {
    ParamBlock x_star;                    // centralized optimum
    std::vector<ParamBlock> x_star_local; // per-agent optima
    std::vector<ParamBlock> x_bar;        // DGD fixed point
    std::vector<ParamBlock> x_hat;        // lambda-combination of the above
    double residual_star = 0.0;           // ||grad sum_i f_i(x*)|| at the reported point
    double residual_local = 0.0;          // max_i ||grad f_i(x_i*)||
    double residual_bar = 0.0;            // ||x_bar - (W x_bar - alpha grad f(x_bar))||
};

inline FixedPointReport compute_fixed_points(const Problem& pr, const Graph& g,
                                             const MixingMatrix& w, double alpha,
                                             const Eigen::VectorXd& lambdas) {
    FixedPointReport rep;
    rep.x_star = centralized_optimum(pr);
    rep.x_star_local = local_optima(pr);
    rep.x_bar = dgd_fixed_point(pr, g, w, alpha);
    rep.x_hat = fj_fixed_point(lambdas, rep.x_star_local, rep.x_bar);

    ParamBlock gsum = pr.local_gradient(0, rep.x_star);
    for (int i = 1; i < pr.n_agents; ++i) gsum += pr.local_gradient(i, rep.x_star);
    rep.residual_star = gsum.norm();
    for (int i = 0; i < pr.n_agents; ++i)
        rep.residual_local = std::max(
            rep.residual_local,
            pr.local_gradient(i, rep.x_star_local[static_cast<std::size_t>(i)]).norm());
    double r2 = 0.0;
    for (int i = 0; i < pr.n_agents; ++i) {
        auto ui = static_cast<std::size_t>(i);
        ParamBlock res = rep.x_bar[ui] - (detail::mix(rep.x_bar, g, w, i) -
                                          alpha * pr.local_gradient(i, rep.x_bar[ui]));
        r2 += res.squaredNorm();
    }
    rep.residual_bar = std::sqrt(r2);
    return rep;
}

struct HeterogeneityReport {
    double big_d = 0.0;   // sqrt(2L sum_i (f_i(x*) - f_i(x_i*)))
    double c_const = 0.0; // sqrt(2L sum_i (f_i(0) - f_i(x*)))
    double distance = 0.0; // measured ||x_bar - 1 (x) x*||
};

inline HeterogeneityReport dgd_suboptimality_bound(const FixedPointReport& rep,
                                                   const ConvexityConstants& k,
                                                   const Problem& pr) {
    HeterogeneityReport h;
    double gap_d = 0.0, gap_c = 0.0;
    ParamBlock zero = pr.zero_params();
    for (int i = 0; i < pr.n_agents; ++i) {
        auto ui = static_cast<std::size_t>(i);
        gap_d += pr.local_loss(i, rep.x_star) - pr.local_loss(i, rep.x_star_local[ui]);
        gap_c += pr.local_loss(i, zero) - pr.local_loss(i, rep.x_star);
    }
    h.big_d = std::sqrt(2.0 * k.big_l * std::max(0.0, gap_d));
    h.c_const = std::sqrt(2.0 * k.big_l * std::max(0.0, gap_c));
    double d2 = 0.0;
    for (const auto& xb : rep.x_bar) d2 += (xb - rep.x_star).squaredNorm();
    h.distance = std::sqrt(d2);
    return h;
}

// Right side of the corruption bound: zeta^k d0 + (1 - min_i lambda_i) tau
// sum_{h=0}^{k-1} zeta^(k-h-1). Asymptote (1 - min lambda) tau / (1 - zeta).
inline double noise_envelope(long k, double zeta, double tau, const Eigen::VectorXd& lambdas,
                             double initial_distance) {
    if (k < 0) throw ContractError("noise_envelope needs k >= 0");
    if (lambdas.size() == 0) throw ContractError("noise_envelope needs lambdas");
    double min_lam = lambdas.minCoeff();
    double zk = std::pow(zeta, static_cast<double>(k));
    double series = (zeta == 1.0) ? static_cast<double>(k) : (1.0 - zk) / (1.0 - zeta);
    return zk * initial_distance + (1.0 - min_lam) * tau * series;
}

// --- trace summaries: stats across agents at the final recorded iteration ---

struct MetricSummary {
    double min = 0.0, mean = 0.0, stddev = 0.0, max = 0.0;
    double p12_5 = 0.0, p87_5 = 0.0; // central-75% interval endpoints
};

struct TraceSummary {
    long iteration = 0;
    int agents = 0;
    int stopped_count = 0;
    std::map<std::string, MetricSummary> metrics;
};

namespace detail {

inline double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    double rank = q * static_cast<double>(v.size() - 1);
    auto lo = static_cast<std::size_t>(rank);
    std::size_t hi = std::min(lo + 1, v.size() - 1);
    double frac = rank - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

inline MetricSummary summarize_column(const std::vector<double>& v) {
    MetricSummary s;
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double a : v) sum += a;
    s.mean = sum / static_cast<double>(v.size());
    double var = 0.0;
    for (double a : v) var += (a - s.mean) * (a - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(v.size()));
    s.p12_5 = percentile(v, 0.125);
    s.p87_5 = percentile(v, 0.875);
    return s;
}

} // namespace detail

inline TraceSummary summarize_trace(const MetricsTrace& t) {
    if (t.rows.empty()) throw ContractError("cannot summarize an empty trace");
    long last = t.rows.back().iteration;
    std::vector<const TraceRow*> rows;
    for (const auto& r : t.rows)
        if (r.iteration == last) rows.push_back(&r);
    TraceSummary s;
    s.iteration = last;
    s.agents = static_cast<int>(rows.size());
    auto column = [&](auto proj) {
        std::vector<double> v;
        v.reserve(rows.size());
        for (const auto* r : rows) v.push_back(proj(*r));
        return detail::summarize_column(v);
    };
    s.metrics["local_train_loss"] = column([](const TraceRow& r) { return r.local_train_loss; });
    s.metrics["global_train_loss"] = column([](const TraceRow& r) { return r.global_train_loss; });
    s.metrics["local_train_acc"] = column([](const TraceRow& r) { return r.local_train_acc; });
    s.metrics["local_test_acc"] = column([](const TraceRow& r) { return r.local_test_acc; });
    s.metrics["global_test_acc"] = column([](const TraceRow& r) { return r.global_test_acc; });
    for (const auto* r : rows) s.stopped_count += r->stopped;
    return s;
}

} // namespace fjdgd
