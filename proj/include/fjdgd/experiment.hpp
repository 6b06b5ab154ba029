#pragma once

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fjdgd/analysis.hpp"
#include "fjdgd/config.hpp"
#include "fjdgd/datagen.hpp"
#include "fjdgd/engine.hpp"
#include "fjdgd/errors.hpp"
#include "fjdgd/problem.hpp"
#include "fjdgd/topology.hpp"

// Turns a validated ExperimentConfig into runnable pieces: the communication
// graph with its Metropolis weights, the per-agent optimization problem, the
// resolved run controls (alpha = "auto" becomes the certified-stable step
// size), and the contraction-rate certificate for the resulting triple.

namespace fjdgd {

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (!in.good() && !in.eof()) throw IoError("failed reading " + path);
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out.good()) throw IoError("failed writing " + path);
}

inline Graph build_topology(const TopologySpec& t, std::uint64_t data_seed) {
    switch (t.kind) {
        case TopologyKind::ring:
            return build_ring(t.n_agents);
        case TopologyKind::circulant:
            return build_circulant(t.n_agents, t.half_width);
        case TopologyKind::random_geometric:
            return build_random_geometric(t.n_agents, t.radius,
                                          derive_seed(data_seed, {0x7090u}));
        case TopologyKind::edge_list:
            return graph_from_edge_list(read_text_file(t.path));
    }
    throw ContractError("unreachable topology kind");
}

// Directory holding IDX files named train-images-idx3-ubyte and
// train-labels-idx1-ubyte: explicit config key first, environment override
// second.
inline std::string resolve_mnist_dir(const DatasetSpec& d) {
    if (!d.dir.empty()) return d.dir;
    if (const char* env = std::getenv("FJDGD_MNIST_DIR"); env && *env) return env;
    throw DataError("no MNIST directory configured: set [dataset] dir or FJDGD_MNIST_DIR "
                    "(gen-data can create a synthetic stand-in corpus)");
}

inline Problem build_problem(const ExperimentConfig& cfg, int n_agents) {
    const DatasetSpec& d = cfg.dataset;
    switch (d.kind) {
        case DatasetKind::synthetic_federated: {
            HeterogeneityParams hp;
            hp.alpha = d.het_alpha;
            hp.beta = d.het_beta;
            auto parts = gen_synthetic_federated(n_agents, d.dim, d.samples, hp, cfg.seeds.data,
                                                 d.train_fraction);
            std::vector<AgentDataset> train, test;
            for (auto& p : parts) {
                train.push_back(std::move(p.train));
                test.push_back(std::move(p.test));
            }
            return make_logistic_problem(TaskKind::binary, std::move(train), std::move(test),
                                         cfg.gamma);
        }
        case DatasetKind::linear_2d: {
            auto train = gen_2d_linear(n_agents, d.theta, d.samples, d.noise_var, cfg.seeds.data);
            std::vector<AgentDataset> test = train; // evaluation is on local data
            for (auto& t : test) t.split = Split::test;
            return make_logistic_problem(TaskKind::binary, std::move(train), std::move(test),
                                         cfg.gamma);
        }
        case DatasetKind::mnist: {
            std::string dir = resolve_mnist_dir(d);
            AgentDataset pool = load_mnist(dir + "/train-images-idx3-ubyte",
                                           dir + "/train-labels-idx1-ubyte");
            PartitionSpec spec;
            spec.mode = d.partition;
            spec.samples_per_agent = d.samples_per_agent;
            spec.train_fraction = d.train_fraction;
            spec.seed = cfg.seeds.data;
            auto parts = partition_mnist(pool, n_agents, spec);
            std::vector<AgentDataset> train, test;
            for (auto& p : parts) {
                train.push_back(std::move(p.train));
                test.push_back(std::move(p.test));
            }
            return make_logistic_problem(TaskKind::multiclass, std::move(train), std::move(test),
                                         cfg.gamma);
        }
        case DatasetKind::quadratic:
            return make_quadratic_problem(n_agents, d.dim, d.curv_min, d.curv_max,
                                          d.center_scale, cfg.seeds.data);
    }
    throw ContractError("unreachable dataset kind");
}

inline std::vector<int> resolve_malicious(const AttackSpec& a, int n_agents,
                                          std::uint64_t attack_seed) {
    std::vector<int> ids;
    if (a.malicious.rfind("random:", 0) == 0) {
        long k = std::stol(a.malicious.substr(7));
        if (k >= n_agents)
            throw ConfigError("attack wants " + std::to_string(k) + " malicious agents but only " +
                              std::to_string(n_agents) + " exist (at least one must stay honest)");
        std::vector<int> all(static_cast<std::size_t>(n_agents));
        std::iota(all.begin(), all.end(), 0);
        Rng rng(derive_seed(attack_seed, {0x3A11Cu}));
        shuffle(all, rng);
        ids.assign(all.begin(), all.begin() + k);
    } else {
        std::stringstream ss(a.malicious);
        std::string item;
        while (std::getline(ss, item, ',')) ids.push_back(std::stoi(detail::trim(item)));
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    for (int id : ids)
        if (id < 0 || id >= n_agents)
            throw ConfigError("malicious agent id " + std::to_string(id) + " outside 0.." +
                              std::to_string(n_agents - 1));
    if (static_cast<int>(ids.size()) >= n_agents)
        throw ConfigError("all agents marked malicious; at least one must stay honest");
    return ids;
}

struct BuiltExperiment {
    Graph graph;
    MixingMatrix w;
    Problem problem;
    RunControls controls;
    RateCertificate certificate;
};

inline BuiltExperiment build_experiment(const ExperimentConfig& cfg, int threads = 1) {
    BuiltExperiment b;
    b.graph = build_topology(cfg.topology, cfg.seeds.data);
    b.w = metropolis_weights(b.graph);
    b.problem = build_problem(cfg, b.graph.n_agents);

    const int n = b.graph.n_agents;
    RunControls& rc = b.controls;
    rc.algorithm = cfg.algorithm;
    double lam_min_w = min_eigenvalue(b.w);
    ConvexityConstants k = b.problem.constants();
    rc.alpha = cfg.alpha_auto ? auto_alpha(k, lam_min_w) : cfg.alpha;
    b.certificate = convergence_rate(rc.alpha, k, lam_min_w);

    if (is_fj(cfg.algorithm)) {
        if (cfg.lambda.size() == 1) {
            rc.lambdas = Eigen::VectorXd::Constant(n, cfg.lambda[0]);
        } else if (static_cast<int>(cfg.lambda.size()) == n) {
            rc.lambdas = Eigen::Map<const Eigen::VectorXd>(cfg.lambda.data(), n);
        } else {
            throw ConfigError("lambda has " + std::to_string(cfg.lambda.size()) +
                              " entries but the topology has " + std::to_string(n) + " agents");
        }
    } else {
        rc.lambdas = Eigen::VectorXd::Zero(n);
    }

    rc.iterations = cfg.iterations;
    rc.update_noise_std = cfg.update_noise_std;
    rc.global_loss_subset = cfg.global_loss_subset;
    rc.metrics_stride = cfg.metrics_stride;
    rc.gaussian_init = cfg.init == InitKind::gaussian;
    rc.init_scale = cfg.init_scale;
    rc.init_seed = cfg.seeds.init;
    rc.noise_seed = cfg.seeds.noise;
    rc.subset_seed = cfg.seeds.data;
    rc.threads = threads;

    if (cfg.attack) {
        AttackConfig a;
        a.malicious = resolve_malicious(*cfg.attack, n, cfg.seeds.attack);
        a.eta = cfg.attack->eta;
        a.kappa = cfg.attack->kappa;
        a.tau = cfg.attack->tau;
        a.seed = cfg.seeds.attack;
        rc.attack = a;
    }
    if (cfg.early_stopping) {
        EarlyStopConfig es;
        es.window = cfg.early_stopping->window;
        es.patience = cfg.early_stopping->patience;
        rc.early_stopping = es;
    }
    return b;
}

inline RunResult run_experiment(const BuiltExperiment& b) {
    return run_loop(b.problem, b.graph, b.w, b.controls);
}

} // namespace fjdgd
