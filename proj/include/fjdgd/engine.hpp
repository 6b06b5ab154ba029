#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fjdgd/errors.hpp"
#include "fjdgd/problem.hpp"
#include "fjdgd/rng.hpp"
#include "fjdgd/topology.hpp"

// The synchronous-round engine: DGD, ATC, Exact Diffusion, Local GD, and the
// two FJ-DGD variants, with optional malicious-message corruption, update
// noise, and per-agent early stopping.
//
// Determinism contract: every run is a pure function of the inputs including
// seeds. All random draws come from (seed, round, agent)-derived streams and
// every agent writes only its own preallocated slot, so the number of worker
// threads cannot change any result bit.

namespace fjdgd {

enum class Algorithm { dgd, atc, ed, local_gd, fj_dgd_1, fj_dgd_2 };

inline bool is_fj(Algorithm a) { return a == Algorithm::fj_dgd_1 || a == Algorithm::fj_dgd_2; }

struct StubbornnessProfile {
    Eigen::VectorXd lambdas; // one entry per agent, each in [0,1]
};

struct AttackConfig {
    std::vector<int> malicious; // agent ids, strictly inside {0..N-1}
    double eta = 0.0;           // per-entry variance slope: var = min(eta*|x|, kappa)
    double kappa = 0.0;         // per-entry variance cap
    // tau = 0: malicious agents train with DGD internally and publish their
    // own parameter plus noise (the corrupted-parameters model).
    // tau > 0: all agents run the nominal algorithm and malicious messages
    // get additive noise whose stacked norm is clipped to tau each round
    // (the bounded-corruption model the noise envelope assumes).
    double tau = 0.0;
    std::uint64_t seed = 0;
};

struct EarlyStopConfig {
    int window = 20;
    int patience = 20;
};

// Moving-average-of-accuracy watchdog. MA is computed once the window is
// full; an update that fails to improve the best MA increments the stall
// counter, and stall > patience trips the stop (so a constant stream stops
// after window + patience + 1 updates). The caller restores best_params.
struct EarlyStopState {
    int window = 20;
    int patience = 20;
    std::vector<double> history; // ring buffer, at most `window` entries
    int next_slot = 0;
    double best_ma = -std::numeric_limits<double>::infinity();
    ParamBlock best_params;
    int stall_count = 0;
    bool stopped = false;
};

inline void early_stop_update(EarlyStopState& es, double train_accuracy,
                              const ParamBlock& current_params) {
    if (es.stopped) return;
    if (static_cast<int>(es.history.size()) < es.window) {
        es.history.push_back(train_accuracy);
        if (static_cast<int>(es.history.size()) < es.window) return;
    } else {
        es.history[static_cast<std::size_t>(es.next_slot)] = train_accuracy;
        es.next_slot = (es.next_slot + 1) % es.window;
    }
    double ma = 0.0;
    for (double a : es.history) ma += a;
    ma /= static_cast<double>(es.window);
    if (ma > es.best_ma) {
        es.best_ma = ma;
        es.best_params = current_params;
        es.stall_count = 0;
    } else {
        ++es.stall_count;
        if (es.stall_count > es.patience) es.stopped = true;
    }
}

// Corrupted copy per the attack model: x + v with v zero-mean Gaussian and
// per-entry variance min(eta*|entry|, kappa). The original is untouched.
inline ParamBlock corrupt_message(const ParamBlock& x, const AttackConfig& cfg, Rng& rng) {
    if (cfg.eta < 0.0 || cfg.kappa < 0.0)
        throw ConfigError("attack eta and kappa must be >= 0");
    ParamBlock out = x;
    double* d = out.data();
    for (Eigen::Index k = 0; k < out.size(); ++k) {
        double var = std::min(cfg.eta * std::abs(d[k]), cfg.kappa);
        d[k] += rng.next_normal(0.0, std::sqrt(var));
    }
    return out;
}

// Stacked per-agent iterates. y exists for the FJ variants (local tracker),
// z for FJ-DGD-2 (consensus tracker), psi_prev for Exact Diffusion.
struct AlgoState {
    std::vector<ParamBlock> x;
    std::vector<ParamBlock> y;
    std::vector<ParamBlock> z;
    std::vector<ParamBlock> psi_prev;
    long iteration = 0;
};

struct TraceRow {
    long iteration = 0;
    int agent = 0;
    double local_train_loss = 0.0;
    double global_train_loss = 0.0;
    double local_train_acc = 0.0;
    double local_test_acc = 0.0;
    double global_test_acc = 0.0;
    int stopped = 0;
};

struct MetricsTrace {
    std::vector<TraceRow> rows;
};

// Thrown when an iterate goes non-finite; carries the trace recorded so far.
struct DivergenceError : Error {
    DivergenceError(const std::string& msg, MetricsTrace partial_trace)
        : Error(msg), partial(std::move(partial_trace)) {}
    MetricsTrace partial;
};

namespace detail {

// Neighbor average through the weight matrix, exploiting graph sparsity.
// `self` is the value the agent uses for its own diagonal term — equal to
// published[i] for honest agents, but a corrupting agent mixes its true
// parameter, not the noisy copy it sent out.
inline ParamBlock mix_with_self(const std::vector<ParamBlock>& published, const ParamBlock& self,
                                const Graph& g, const MixingMatrix& w, int i) {
    ParamBlock acc = w(i, i) * self;
    for (int j : g.adjacency[static_cast<std::size_t>(i)])
        acc += w(i, j) * published[static_cast<std::size_t>(j)];
    return acc;
}

inline ParamBlock mix(const std::vector<ParamBlock>& published, const Graph& g,
                      const MixingMatrix& w, int i) {
    return mix_with_self(published, published[static_cast<std::size_t>(i)], g, w, i);
}

// lam*y + (1-lam)*u, short-circuited at the endpoints so lam = 0 and lam = 1
// degenerate to the pure trajectories bit-for-bit (and stay immune to the
// unused track even if it blows up).
inline ParamBlock combine(double lam, const ParamBlock& y, const ParamBlock& u) {
    if (lam == 0.0) return u;
    if (lam == 1.0) return y;
    return lam * y + (1.0 - lam) * u;
}

inline void run_parallel(int n, int threads, const std::function<void(int)>& fn) {
    threads = std::max(1, threads);
    if (threads == 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    };
    std::vector<std::thread> pool;
    int spawn = std::min(threads, n) - 1;
    pool.reserve(static_cast<std::size_t>(spawn));
    for (int t = 0; t < spawn; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
}

} // namespace detail

// --- single-round reference steps (no attack, no noise, no early stopping);
// --- run_loop below routes through the same primitives.

inline void step_dgd(AlgoState& s, const Graph& g, const MixingMatrix& w, double alpha,
                     const Problem& pr) {
    std::vector<ParamBlock> next(s.x.size());
    for (int i = 0; i < pr.n_agents; ++i)
        next[static_cast<std::size_t>(i)] =
            detail::mix(s.x, g, w, i) - alpha * pr.local_gradient(i, s.x[static_cast<std::size_t>(i)]);
    s.x = std::move(next);
    ++s.iteration;
}

inline void step_atc(AlgoState& s, const Graph& g, const MixingMatrix& w, double alpha,
                     const Problem& pr) {
    std::vector<ParamBlock> adapted(s.x.size());
    for (int i = 0; i < pr.n_agents; ++i)
        adapted[static_cast<std::size_t>(i)] =
            s.x[static_cast<std::size_t>(i)] - alpha * pr.local_gradient(i, s.x[static_cast<std::size_t>(i)]);
    for (int i = 0; i < pr.n_agents; ++i)
        s.x[static_cast<std::size_t>(i)] = detail::mix(adapted, g, w, i);
    ++s.iteration;
}

inline void step_local_gd(AlgoState& s, double alpha, const Problem& pr) {
    for (int i = 0; i < pr.n_agents; ++i) {
        auto& xi = s.x[static_cast<std::size_t>(i)];
        xi -= alpha * pr.local_gradient(i, xi);
    }
    ++s.iteration;
}

// psi = x - alpha*grad(x); phi = psi + x - psi_prev; x = Wbar*phi with
// Wbar = (W+I)/2; psi_prev starts at x0.
inline void step_exact_diffusion(AlgoState& s, const Graph& g, const MixingMatrix& w,
                                 double alpha, const Problem& pr) {
    const std::size_t n = s.x.size();
    if (s.psi_prev.size() != n) s.psi_prev = s.x;
    std::vector<ParamBlock> psi(n), phi(n);
    for (int i = 0; i < pr.n_agents; ++i) {
        auto ui = static_cast<std::size_t>(i);
        psi[ui] = s.x[ui] - alpha * pr.local_gradient(i, s.x[ui]);
        phi[ui] = psi[ui] + s.x[ui] - s.psi_prev[ui];
    }
    MixingMatrix wbar = 0.5 * (w + MixingMatrix::Identity(w.rows(), w.cols()));
    for (int i = 0; i < pr.n_agents; ++i)
        s.x[static_cast<std::size_t>(i)] = detail::mix(phi, g, wbar, i);
    s.psi_prev = std::move(psi);
    ++s.iteration;
}

inline void check_lambdas(const Eigen::VectorXd& lambdas, int n_agents) {
    if (lambdas.size() != n_agents)
        throw ConfigError("need one lambda per agent");
    for (Eigen::Index i = 0; i < lambdas.size(); ++i)
        if (!(lambdas(i) >= 0.0) || !(lambdas(i) <= 1.0))
            throw ConfigError("lambda must lie in [0,1], got " + std::to_string(lambdas(i)));
}

// y <- y - alpha*grad(y); x_i <- lam_i*y_i + (1-lam_i)*(mix(x)_i - alpha*grad_i(x_i))
inline void step_fj_dgd_1(AlgoState& s, const Graph& g, const MixingMatrix& w, double alpha,
                          const StubbornnessProfile& profile, const Problem& pr) {
    check_lambdas(profile.lambdas, pr.n_agents);
    if (s.y.size() != s.x.size()) throw ContractError("FJ-DGD-1 needs the y track initialized");
    std::vector<ParamBlock> next(s.x.size());
    for (int i = 0; i < pr.n_agents; ++i) {
        auto ui = static_cast<std::size_t>(i);
        s.y[ui] -= alpha * pr.local_gradient(i, s.y[ui]);
        ParamBlock u = detail::mix(s.x, g, w, i) - alpha * pr.local_gradient(i, s.x[ui]);
        next[ui] = detail::combine(profile.lambdas(i), s.y[ui], u);
    }
    s.x = std::move(next);
    ++s.iteration;
}

// y <- y - alpha*grad(y); z <- mix(z) - alpha*grad(z); x <- lam*y + (1-lam)*z
inline void step_fj_dgd_2(AlgoState& s, const Graph& g, const MixingMatrix& w, double alpha,
                          const StubbornnessProfile& profile, const Problem& pr) {
    check_lambdas(profile.lambdas, pr.n_agents);
    if (s.y.size() != s.x.size() || s.z.size() != s.x.size())
        throw ContractError("FJ-DGD-2 needs the y and z tracks initialized");
    std::vector<ParamBlock> znext(s.z.size());
    for (int i = 0; i < pr.n_agents; ++i) {
        auto ui = static_cast<std::size_t>(i);
        s.y[ui] -= alpha * pr.local_gradient(i, s.y[ui]);
        znext[ui] = detail::mix(s.z, g, w, i) - alpha * pr.local_gradient(i, s.z[ui]);
    }
    s.z = std::move(znext);
    for (int i = 0; i < pr.n_agents; ++i) {
        auto ui = static_cast<std::size_t>(i);
        s.x[ui] = detail::combine(profile.lambdas(i), s.y[ui], s.z[ui]);
    }
    ++s.iteration;
}

// --- full experiment loop ---

struct RunControls {
    Algorithm algorithm = Algorithm::dgd;
    double alpha = 0.1;
    Eigen::VectorXd lambdas; // used by FJ variants only
    long iterations = 0;
    std::optional<AttackConfig> attack;
    std::optional<EarlyStopConfig> early_stopping;
    double update_noise_std = 0.0;
    long global_loss_subset = 0; // 0 = evaluate on the full pooled train set
    long metrics_stride = 1;     // trace rows at iterations 0, s, 2s, ..., K
    bool gaussian_init = false;
    double init_scale = 1.0;
    std::uint64_t init_seed = 0;
    std::uint64_t noise_seed = 0;
    std::uint64_t subset_seed = 0;
    int threads = 1;
    bool capture_trajectory = false;      // keep every iteration's stacked x
    std::optional<AlgoState> resume;      // continue from a dumped state
};

struct RunResult {
    MetricsTrace trace;
    AlgoState state;
    // trajectory[k][i] = agent i's x at iteration resume_start + k (all
    // iterations, independent of metrics_stride); filled when requested.
    std::vector<std::vector<ParamBlock>> trajectory;
};

namespace detail {

// Pooled dataset across agents, optionally restricted to a fixed random
// subset chosen once (so the metric is comparable across iterations).
inline AgentDataset pool_datasets(const std::vector<AgentDataset>& parts, long subset,
                                  std::uint64_t seed, Split split) {
    Eigen::Index total = 0;
    for (const auto& d : parts) total += d.m();
    AgentDataset pool;
    pool.features.resize(total, parts[0].p());
    pool.labels.resize(total);
    Eigen::Index at = 0;
    for (const auto& d : parts) {
        pool.features.middleRows(at, d.m()) = d.features;
        pool.labels.segment(at, d.m()) = d.labels;
        at += d.m();
    }
    pool.split = split;
    if (subset > 0 && subset < total) {
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(total));
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        Rng rng(derive_seed(seed, {0x5b5e7u}));
        shuffle(idx, rng);
        AgentDataset sub;
        sub.features.resize(subset, pool.p());
        sub.labels.resize(subset);
        for (long k = 0; k < subset; ++k) {
            sub.features.row(k) = pool.features.row(idx[static_cast<std::size_t>(k)]);
            sub.labels(k) = pool.labels(idx[static_cast<std::size_t>(k)]);
        }
        sub.split = split;
        return sub;
    }
    return pool;
}

inline bool all_finite(const ParamBlock& b) { return b.allFinite(); }

} // namespace detail

inline RunResult run_loop(const Problem& pr, const Graph& g, const MixingMatrix& w,
                          const RunControls& rc) {
    const int n = pr.n_agents;
    if (g.n_agents != n) throw ContractError("problem and graph disagree on agent count");
    if (!(rc.alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (rc.iterations < 0) throw ConfigError("iterations must be >= 0");
    if (rc.metrics_stride < 1) throw ConfigError("metrics_stride must be >= 1");
    if (rc.update_noise_std < 0.0) throw ConfigError("update_noise_std must be >= 0");

    const Algorithm algo = rc.algorithm;
    Eigen::VectorXd lambdas = rc.lambdas;
    if (is_fj(algo)) {
        check_lambdas(lambdas, n);
    } else {
        lambdas = Eigen::VectorXd::Zero(n);
    }

    std::vector<char> malicious(static_cast<std::size_t>(n), 0);
    bool replace_attack = false, bounded_attack = false;
    if (rc.attack) {
        if (rc.attack->eta < 0.0 || rc.attack->kappa < 0.0 || rc.attack->tau < 0.0)
            throw ConfigError("attack eta/kappa/tau must be >= 0");
        for (int m : rc.attack->malicious) {
            if (m < 0 || m >= n) throw ConfigError("malicious id out of range");
            malicious[static_cast<std::size_t>(m)] = 1;
        }
        if (static_cast<std::size_t>(std::count(malicious.begin(), malicious.end(), char(1))) ==
            static_cast<std::size_t>(n))
            throw ConfigError("honest set must be nonempty");
        bounded_attack = rc.attack->tau > 0.0;
        replace_attack = !bounded_attack && !rc.attack->malicious.empty();
        if (algo == Algorithm::local_gd) replace_attack = bounded_attack = false; // inert
    }
    if (rc.early_stopping && !pr.has_accuracy())
        throw ConfigError("early stopping needs an accuracy metric (classification tasks)");
    if (rc.early_stopping && (rc.early_stopping->window < 1 || rc.early_stopping->patience < 1))
        throw ConfigError("early-stopping window and patience must be >= 1");

    // Initial state.
    AlgoState st;
    const bool need_y = is_fj(algo);
    const bool need_z = algo == Algorithm::fj_dgd_2;
    if (rc.resume) {
        st = *rc.resume;
        if (static_cast<int>(st.x.size()) != n)
            throw ContractError("resume state has wrong agent count");
        if (need_y && st.y.size() != st.x.size())
            throw ContractError("resume state is missing the y track");
        if (need_z && st.z.size() != st.x.size())
            throw ContractError("resume state is missing the z track");
        if (algo == Algorithm::ed && st.psi_prev.size() != st.x.size())
            throw ContractError("resume state is missing the psi_prev track");
    } else {
        st.x.assign(static_cast<std::size_t>(n), pr.zero_params());
        if (rc.gaussian_init) {
            for (int i = 0; i < n; ++i) {
                Rng rng(derive_seed(rc.init_seed, {0x1417u, static_cast<std::uint64_t>(i)}));
                auto& xi = st.x[static_cast<std::size_t>(i)];
                for (Eigen::Index k = 0; k < xi.size(); ++k)
                    xi.data()[k] = rng.next_normal(0.0, rc.init_scale);
            }
        }
        if (need_y) st.y = st.x;
        if (need_z) st.z = st.x;
        if (algo == Algorithm::ed) st.psi_prev = st.x;
        st.iteration = 0;
    }

    // Pooled evaluation sets for the global metrics.
    AgentDataset pooled_train, pooled_test;
    if (pr.has_accuracy()) {
        pooled_train = detail::pool_datasets(pr.train, rc.global_loss_subset, rc.subset_seed,
                                             Split::train);
        pooled_test = detail::pool_datasets(pr.test, 0, 0, Split::test);
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    auto metrics_for = [&](int i) {
        TraceRow r;
        r.agent = i;
        const ParamBlock& xi = st.x[static_cast<std::size_t>(i)];
        r.local_train_loss = pr.local_loss(i, xi);
        if (pr.has_accuracy()) {
            r.global_train_loss = (pr.kind == TaskKind::binary)
                                      ? binary_logistic_loss(xi, pooled_train, pr.gamma)
                                      : multiclass_logistic_loss(xi, pooled_train, pr.gamma);
            r.local_train_acc = accuracy(xi, pr.train[static_cast<std::size_t>(i)]);
            r.local_test_acc = accuracy(xi, pr.test[static_cast<std::size_t>(i)]);
            r.global_test_acc = accuracy(xi, pooled_test);
        } else {
            double gl = 0.0;
            for (int j = 0; j < n; ++j) gl += pr.local_loss(j, xi);
            r.global_train_loss = gl / static_cast<double>(n);
            r.local_train_acc = r.local_test_acc = r.global_test_acc = nan;
        }
        return r;
    };

    std::vector<EarlyStopState> es;
    if (rc.early_stopping) {
        es.assign(static_cast<std::size_t>(n), {});
        for (auto& e : es) {
            e.window = rc.early_stopping->window;
            e.patience = rc.early_stopping->patience;
        }
    }
    auto agent_stopped = [&](int i) {
        return rc.early_stopping && es[static_cast<std::size_t>(i)].stopped;
    };

    RunResult out;
    std::vector<TraceRow> row_slots(static_cast<std::size_t>(n));
    std::vector<char> row_cached(static_cast<std::size_t>(n), 0);
    auto emit_rows = [&](long iter) {
        detail::run_parallel(n, rc.threads, [&](int i) {
            if (!row_cached[static_cast<std::size_t>(i)]) {
                row_slots[static_cast<std::size_t>(i)] = metrics_for(i);
                if (agent_stopped(i)) row_cached[static_cast<std::size_t>(i)] = 1;
            }
        });
        for (int i = 0; i < n; ++i) {
            TraceRow r = row_slots[static_cast<std::size_t>(i)];
            r.iteration = iter;
            r.stopped = agent_stopped(i) ? 1 : 0;
            out.trace.rows.push_back(r);
        }
    };

    const long start = st.iteration;
    const long last = start + rc.iterations;
    if (rc.capture_trajectory) out.trajectory.push_back(st.x);
    emit_rows(start);

    // Wbar for exact diffusion.
    MixingMatrix wbar;
    if (algo == Algorithm::ed)
        wbar = 0.5 * (w + MixingMatrix::Identity(w.rows(), w.cols()));

    std::vector<ParamBlock> published(static_cast<std::size_t>(n));
    std::vector<ParamBlock> psi_new(static_cast<std::size_t>(n));
    std::vector<ParamBlock> track_new(static_cast<std::size_t>(n));

    for (long k = start + 1; k <= last; ++k) {
        // Phase 1: publish. Honest agents expose the value their neighbors'
        // mixing step consumes; malicious agents (corrupted-parameters model)
        // expose their internally DGD-trained parameter plus clamped-variance
        // noise; stopped agents keep transmitting their frozen parameter.
        detail::run_parallel(n, rc.threads, [&](int i) {
            auto ui = static_cast<std::size_t>(i);
            if (agent_stopped(i) || (replace_attack && malicious[ui])) {
                published[ui] = st.x[ui];
            } else {
                switch (algo) {
                case Algorithm::dgd:
                case Algorithm::fj_dgd_1:
                case Algorithm::local_gd: published[ui] = st.x[ui]; break;
                case Algorithm::fj_dgd_2: published[ui] = st.z[ui]; break;
                case Algorithm::atc: published[ui] = st.x[ui] - rc.alpha * pr.local_gradient(i, st.x[ui]); break;
                case Algorithm::ed: {
                    psi_new[ui] = st.x[ui] - rc.alpha * pr.local_gradient(i, st.x[ui]);
                    published[ui] = psi_new[ui] + st.x[ui] - st.psi_prev[ui];
                    break;
                }
                }
            }
            if (replace_attack && malicious[ui] && !agent_stopped(i)) {
                Rng rng(derive_seed(rc.attack->seed, {0xA77u, static_cast<std::uint64_t>(k),
                                                      static_cast<std::uint64_t>(i)}));
                published[ui] = corrupt_message(st.x[ui], *rc.attack, rng);
            }
        });
        if (bounded_attack) {
            // Draw per-malicious noise, clip the stacked vector onto the
            // tau-ball, then add to the nominal published values.
            std::vector<ParamBlock> noise(static_cast<std::size_t>(n));
            double sq = 0.0;
            for (int i = 0; i < n; ++i) {
                auto ui = static_cast<std::size_t>(i);
                if (!malicious[ui]) continue;
                Rng rng(derive_seed(rc.attack->seed, {0xA77u, static_cast<std::uint64_t>(k),
                                                      static_cast<std::uint64_t>(i)}));
                noise[ui] = corrupt_message(published[ui], *rc.attack, rng) - published[ui];
                sq += noise[ui].squaredNorm();
            }
            double scale = (sq > rc.attack->tau * rc.attack->tau)
                               ? rc.attack->tau / std::sqrt(sq)
                               : 1.0;
            for (int i = 0; i < n; ++i) {
                auto ui = static_cast<std::size_t>(i);
                if (malicious[ui]) published[ui] += scale * noise[ui];
            }
        }

        // Phase 2: update. Each agent reads `published` and writes only its
        // own slots.
        detail::run_parallel(n, rc.threads, [&](int i) {
            auto ui = static_cast<std::size_t>(i);
            if (agent_stopped(i)) return;
            Algorithm eff = algo;
            if (replace_attack && malicious[ui]) eff = Algorithm::dgd; // internal honest DGD
            switch (eff) {
            case Algorithm::dgd:
                // A corrupting agent mixes its own true parameter in place of
                // the noisy copy it published; for honest agents the two are
                // the same object value.
                track_new[ui] = detail::mix_with_self(published,
                                                      (replace_attack && malicious[ui])
                                                          ? st.x[ui]
                                                          : published[ui],
                                                      g, w, i) -
                                rc.alpha * pr.local_gradient(i, st.x[ui]);
                break;
            case Algorithm::atc:
                track_new[ui] = detail::mix(published, g, w, i);
                break;
            case Algorithm::ed:
                track_new[ui] = detail::mix(published, g, wbar, i);
                break;
            case Algorithm::local_gd:
                track_new[ui] = st.x[ui] - rc.alpha * pr.local_gradient(i, st.x[ui]);
                break;
            case Algorithm::fj_dgd_1: {
                st.y[ui] -= rc.alpha * pr.local_gradient(i, st.y[ui]);
                ParamBlock u = detail::mix(published, g, w, i) - rc.alpha * pr.local_gradient(i, st.x[ui]);
                if (rc.update_noise_std > 0.0) {
                    Rng rng(derive_seed(rc.noise_seed, {0x906Eu, static_cast<std::uint64_t>(k),
                                                        static_cast<std::uint64_t>(i)}));
                    for (Eigen::Index q = 0; q < u.size(); ++q)
                        u.data()[q] += rng.next_normal(0.0, rc.update_noise_std);
                }
                track_new[ui] = detail::combine(lambdas(i), st.y[ui], u);
                break;
            }
            case Algorithm::fj_dgd_2: {
                st.y[ui] -= rc.alpha * pr.local_gradient(i, st.y[ui]);
                track_new[ui] = detail::mix(published, g, w, i) - rc.alpha * pr.local_gradient(i, st.z[ui]);
                break;
            }
            }
            // Gaussian perturbation of the algorithm update itself: applied
            // to the consensus-track value for DGD-like updates (FJ-DGD-1
            // handled above, before the combine).
            if (rc.update_noise_std > 0.0 && eff != Algorithm::fj_dgd_1) {
                Rng rng(derive_seed(rc.noise_seed, {0x906Eu, static_cast<std::uint64_t>(k),
                                                    static_cast<std::uint64_t>(i)}));
                for (Eigen::Index q = 0; q < track_new[ui].size(); ++q)
                    track_new[ui].data()[q] += rng.next_normal(0.0, rc.update_noise_std);
            }
        });

        // Phase 3: commit tracks, derive x, check finiteness.
        for (int i = 0; i < n; ++i) {
            auto ui = static_cast<std::size_t>(i);
            if (agent_stopped(i)) continue;
            if (replace_attack && malicious[ui]) {
                st.x[ui] = track_new[ui];
                if (need_y) st.y[ui] = st.x[ui];
                if (need_z) st.z[ui] = st.x[ui];
                continue;
            }
            switch (algo) {
            case Algorithm::fj_dgd_2:
                st.z[ui] = track_new[ui];
                st.x[ui] = detail::combine(lambdas(i), st.y[ui], st.z[ui]);
                break;
            case Algorithm::ed:
                st.x[ui] = track_new[ui];
                st.psi_prev[ui] = psi_new[ui];
                break;
            default:
                st.x[ui] = track_new[ui];
                break;
            }
        }
        st.iteration = k;
        for (int i = 0; i < n; ++i)
            if (!detail::all_finite(st.x[static_cast<std::size_t>(i)]))
                throw DivergenceError("iterate diverged (non-finite) at iteration " +
                                          std::to_string(k) + ", agent " + std::to_string(i),
                                      std::move(out.trace));

        if (rc.capture_trajectory) out.trajectory.push_back(st.x);

        // Phase 4: metrics and early stopping. The watchdog needs the local
        // training accuracy every round; full rows only on the stride.
        const bool emit = (k - start) % rc.metrics_stride == 0 || k == last;
        if (rc.early_stopping) {
            std::vector<double> acc_slot(static_cast<std::size_t>(n), 0.0);
            detail::run_parallel(n, rc.threads, [&](int i) {
                auto ui = static_cast<std::size_t>(i);
                if (agent_stopped(i) || malicious[ui]) return;
                acc_slot[ui] = accuracy(st.x[ui], pr.train[ui]);
            });
            for (int i = 0; i < n; ++i) {
                auto ui = static_cast<std::size_t>(i);
                if (agent_stopped(i) || malicious[ui]) continue;
                early_stop_update(es[ui], acc_slot[ui], st.x[ui]);
                if (es[ui].stopped) {
                    st.x[ui] = es[ui].best_params; // restore and freeze
                    row_cached[ui] = 0;            // metrics cache now stale
                }
            }
        }
        if (emit) emit_rows(k);
    }

    out.state = std::move(st);
    return out;
}

// --- trace / state serialization ---

namespace detail {

inline void append_g17(std::string& s, double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    s += buf;
}

} // namespace detail

inline std::string trace_to_csv(const MetricsTrace& t) {
    std::string s = "iteration,agent,local_train_loss,global_train_loss,local_train_acc,"
                    "local_test_acc,global_test_acc,stopped\n";
    for (const auto& r : t.rows) {
        s += std::to_string(r.iteration);
        s += ',';
        s += std::to_string(r.agent);
        s += ',';
        detail::append_g17(s, r.local_train_loss);
        s += ',';
        detail::append_g17(s, r.global_train_loss);
        s += ',';
        detail::append_g17(s, r.local_train_acc);
        s += ',';
        detail::append_g17(s, r.local_test_acc);
        s += ',';
        detail::append_g17(s, r.global_test_acc);
        s += ',';
        s += std::to_string(r.stopped);
        s += '\n';
    }
    return s;
}

// Text checkpoint: %.17g round-trips doubles exactly, so dump + restore
// reproduces the state bit-for-bit.
inline std::string dump_state(const AlgoState& st) {
    std::string s = "fjdgd-state 1\n";
    s += "iteration " + std::to_string(st.iteration) + "\n";
    s += "agents " + std::to_string(st.x.size()) + "\n";
    if (!st.x.empty())
        s += "shape " + std::to_string(st.x[0].rows()) + " " + std::to_string(st.x[0].cols()) + "\n";
    else
        s += "shape 0 0\n";
    auto dump_track = [&s](const char* name, const std::vector<ParamBlock>& track) {
        if (track.empty()) return;
        s += std::string("track ") + name + "\n";
        for (const auto& b : track) {
            for (Eigen::Index q = 0; q < b.size(); ++q) {
                if (q) s += ' ';
                detail::append_g17(s, b.data()[q]);
            }
            s += '\n';
        }
    };
    dump_track("x", st.x);
    dump_track("y", st.y);
    dump_track("z", st.z);
    dump_track("psi_prev", st.psi_prev);
    return s;
}

inline AlgoState load_state(const std::string& text) {
    std::istringstream in(text);
    std::string word;
    AlgoState st;
    long n = 0, rows = 0, cols = 0;
    if (!(in >> word) || word != "fjdgd-state" || !(in >> word) || word != "1")
        throw DataError("not a state checkpoint (missing header)");
    if (!(in >> word) || word != "iteration" || !(in >> st.iteration))
        throw DataError("state checkpoint: bad iteration line");
    if (!(in >> word) || word != "agents" || !(in >> n) || n < 0)
        throw DataError("state checkpoint: bad agents line");
    if (!(in >> word) || word != "shape" || !(in >> rows) || !(in >> cols))
        throw DataError("state checkpoint: bad shape line");
    while (in >> word) {
        if (word != "track") throw DataError("state checkpoint: expected track, got " + word);
        std::string name;
        if (!(in >> name)) throw DataError("state checkpoint: missing track name");
        std::vector<ParamBlock> track(static_cast<std::size_t>(n));
        for (long i = 0; i < n; ++i) {
            ParamBlock b(rows, cols);
            for (Eigen::Index q = 0; q < b.size(); ++q)
                if (!(in >> b.data()[q]))
                    throw DataError("state checkpoint: truncated track " + name);
            track[static_cast<std::size_t>(i)] = std::move(b);
        }
        if (name == "x") st.x = std::move(track);
        else if (name == "y") st.y = std::move(track);
        else if (name == "z") st.z = std::move(track);
        else if (name == "psi_prev") st.psi_prev = std::move(track);
        else throw DataError("state checkpoint: unknown track " + name);
    }
    return st;
}

} // namespace fjdgd
