#pragma once

#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <string>
#include <vector>

#include "fjdgd/analysis.hpp"
#include "fjdgd/config.hpp"
#include "fjdgd/experiment.hpp"

// Command implementations behind the `fjdgd` binary: seeded dataset export
// (gen-data), single experiment runs (run), one-axis parameter sweeps (sweep),
// and post-hoc oracle analysis of a finished run directory (analyze).

namespace fjdgd {

namespace fs = std::filesystem;

inline nlohmann::json certificate_json(const RateCertificate& c) {
    return {{"alpha", c.alpha},
            {"mu", c.mu},
            {"big_l", c.big_l},
            {"lambda_min_w", c.lambda_min_w},
            {"zeta", c.zeta},
            {"convergent", c.convergent}};
}

inline nlohmann::json summary_json(const TraceSummary& s) {
    nlohmann::json metrics;
    for (const auto& [name, m] : s.metrics)
        metrics[name] = {{"min", m.min},     {"mean", m.mean},   {"std", m.stddev},
                         {"max", m.max},     {"p12_5", m.p12_5}, {"p87_5", m.p87_5}};
    return {{"iteration", s.iteration},
            {"agents", s.agents},
            {"stopped", s.stopped_count},
            {"metrics", metrics}};
}

inline nlohmann::json param_json(const ParamBlock& x) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < x.cols(); ++c) row.push_back(x(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline nlohmann::json param_list_json(const std::vector<ParamBlock>& xs) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& x : xs) out.push_back(param_json(x));
    return out;
}

// Refuses to reuse a non-empty directory unless forced; creates it if absent.
inline void prepare_out_dir(const fs::path& out, bool force) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create directory " + out.string() + ": " + ec.message());
    if (!force && !fs::is_empty(out))
        throw IoError("output directory " + out.string() +
                      " is not empty; pass --force to write into it anyway");
}

// --- gen-data ---------------------------------------------------------------

inline int cmd_gen_data(const std::string& config_path, const std::string& out_dir, bool force) {
    ExperimentConfig cfg = parse_config(read_text_file(config_path));
    prepare_out_dir(out_dir, force);
    fs::path out(out_dir);

    nlohmann::json manifest;
    manifest["data_seed"] = cfg.seeds.data;

    auto write_agents = [&](const std::vector<TrainTest>& parts) {
        char name[64];
        for (std::size_t i = 0; i < parts.size(); ++i) {
            std::snprintf(name, sizeof name, "agent_%03zu.train.csv", i);
            write_text_file((out / name).string(), dataset_to_csv(parts[i].train));
            std::snprintf(name, sizeof name, "agent_%03zu.test.csv", i);
            write_text_file((out / name).string(), dataset_to_csv(parts[i].test));
        }
        manifest["agents"] = parts.size();
    };

    switch (cfg.dataset.kind) {
        case DatasetKind::synthetic_federated: {
            HeterogeneityParams hp;
            hp.alpha = cfg.dataset.het_alpha;
            hp.beta = cfg.dataset.het_beta;
            write_agents(gen_synthetic_federated(cfg.topology.n_agents, cfg.dataset.dim,
                                                 cfg.dataset.samples, hp, cfg.seeds.data,
                                                 cfg.dataset.train_fraction));
            manifest["kind"] = "synthetic_federated";
            break;
        }
        case DatasetKind::linear_2d: {
            auto train = gen_2d_linear(cfg.topology.n_agents, cfg.dataset.theta,
                                       cfg.dataset.samples, cfg.dataset.noise_var, cfg.seeds.data);
            std::vector<TrainTest> parts(train.size());
            for (std::size_t i = 0; i < train.size(); ++i) {
                parts[i].train = train[i];
                parts[i].test = train[i];
                parts[i].test.split = Split::test;
            }
            write_agents(parts);
            manifest["kind"] = "linear_2d";
            break;
        }
        case DatasetKind::mnist: {
            // Without a source corpus this synthesizes an MNIST-shaped stand-in
            // pool; with one it re-exports the per-agent partition as CSV.
            std::string dir;
            try {
                dir = resolve_mnist_dir(cfg.dataset);
            } catch (const DataError&) {
                dir.clear();
            }
            if (dir.empty()) {
                int need = cfg.topology.n_agents * cfg.dataset.samples_per_agent;
                int pool = std::max(60000, need);
                std::vector<unsigned char> pixels, labels;
                gen_mnist_like(pool, cfg.seeds.data, pixels, labels);
                write_idx_images((out / "train-images-idx3-ubyte").string(), pixels, pool, 28, 28);
                write_idx_labels((out / "train-labels-idx1-ubyte").string(), labels);
                manifest["kind"] = "mnist_like";
                manifest["samples"] = pool;
            } else {
                AgentDataset pool = load_mnist(dir + "/train-images-idx3-ubyte",
                                               dir + "/train-labels-idx1-ubyte");
                PartitionSpec spec;
                spec.mode = cfg.dataset.partition;
                spec.samples_per_agent = cfg.dataset.samples_per_agent;
                spec.train_fraction = cfg.dataset.train_fraction;
                spec.seed = cfg.seeds.data;
                write_agents(partition_mnist(pool, cfg.topology.n_agents, spec));
                manifest["kind"] = "mnist";
                manifest["source"] = dir;
            }
            break;
        }
        case DatasetKind::quadratic:
            throw ConfigError("gen-data exports sample-based datasets; the quadratic task has none");
    }
    write_text_file((out / "manifest.json").string(), manifest.dump(2) + "\n");
    return 0;
}

// --- run ---------------------------------------------------------------------

inline int cmd_run(const std::string& config_path, const std::string& out_dir, bool force,
                   int threads) {
    ExperimentConfig cfg = parse_config(read_text_file(config_path));
    prepare_out_dir(out_dir, force);
    fs::path out(out_dir);

    BuiltExperiment b = build_experiment(cfg, threads);
    write_text_file((out / "config.resolved").string(), emit_config(cfg));
    write_text_file((out / "certificate.json").string(), certificate_json(b.certificate).dump(2) + "\n");
    if (!b.certificate.convergent)
        std::cerr << "warning: zeta = " << b.certificate.zeta
                  << " >= 1; no contraction guarantee at this step size\n";

    MetricsTrace trace;
    bool diverged = false;
    std::string diag;
    try {
        trace = run_experiment(b).trace;
    } catch (const DivergenceError& e) {
        trace = e.partial;
        diverged = true;
        diag = e.what();
    }
    write_text_file((out / "trace.csv").string(), trace_to_csv(trace));
    if (diverged) {
        std::cerr << "error: " << diag << " (partial trace written)\n";
        return 1;
    }
    write_text_file((out / "summary.json").string(),
                    summary_json(summarize_trace(trace)).dump(2) + "\n");
    return 0;
}

// --- sweep --------------------------------------------------------------------

// One-axis override of a parsed config. Covers the quantities the experiments
// vary; everything else should live in the base config file.
inline void apply_sweep_value(ExperimentConfig& cfg, const std::string& name,
                              const std::string& value) {
    auto num = [&](const char* what) {
        try {
            std::size_t pos = 0;
            double v = std::stod(value, &pos);
            if (pos != value.size()) throw std::invalid_argument(value);
            return v;
        } catch (const std::exception&) {
            throw ConfigError(std::string("sweep value '") + value + "' for '" + name +
                              "' is not a " + what);
        }
    };
    auto integer = [&](const char* what) {
        double v = num(what);
        auto l = static_cast<long>(v);
        if (static_cast<double>(l) != v)
            throw ConfigError("sweep value '" + value + "' for '" + name + "' is not an integer");
        return l;
    };
    if (name == "lambda") {
        double v = num("number");
        if (!(v >= 0.0 && v <= 1.0))
            throw ConfigError("sweep lambda value " + value + " outside [0, 1]");
        if (!is_fj(cfg.algorithm))
            throw ConfigError("sweeping lambda requires an fj_dgd algorithm, not " +
                              algorithm_name(cfg.algorithm));
        cfg.lambda = {v};
    } else if (name == "alpha") {
        if (value == "auto") {
            cfg.alpha_auto = true;
            cfg.alpha = 0.0;
        } else {
            double v = num("number");
            if (!(v > 0.0)) throw ConfigError("sweep alpha must be positive or 'auto'");
            cfg.alpha_auto = false;
            cfg.alpha = v;
        }
    } else if (name == "gamma") {
        double v = num("number");
        if (!(v > 0.0)) throw ConfigError("sweep gamma must be positive");
        cfg.gamma = v;
    } else if (name == "iterations") {
        long v = integer("integer");
        if (v < 0) throw ConfigError("sweep iterations must be >= 0");
        cfg.iterations = v;
    } else if (name == "update_noise_std") {
        double v = num("number");
        if (!(v >= 0.0)) throw ConfigError("sweep update_noise_std must be >= 0");
        cfg.update_noise_std = v;
    } else if (name == "theta") {
        double v = num("number");
        if (!(v > 0.0)) throw ConfigError("sweep theta must be positive");
        cfg.dataset.theta = v;
    } else if (name == "het_alpha" || name == "het_beta") {
        double v = num("number");
        if (!(v >= 0.0)) throw ConfigError("sweep " + name + " must be >= 0");
        (name == "het_alpha" ? cfg.dataset.het_alpha : cfg.dataset.het_beta) = v;
    } else if (name == "noise_var") {
        double v = num("number");
        if (!(v >= 0.0)) throw ConfigError("sweep noise_var must be >= 0");
        cfg.dataset.noise_var = v;
    } else if (name == "eta" || name == "kappa" || name == "tau") {
        if (!cfg.attack)
            throw ConfigError("sweeping '" + name + "' needs an [attack] section in the config");
        double v = num("number");
        if (!(v >= 0.0)) throw ConfigError("sweep " + name + " must be >= 0");
        if (name == "eta") cfg.attack->eta = v;
        else if (name == "kappa") cfg.attack->kappa = v;
        else cfg.attack->tau = v;
    } else if (name == "data_seed" || name == "init_seed" || name == "attack_seed" ||
               name == "noise_seed") {
        long v = integer("integer");
        if (v < 0) throw ConfigError("sweep seeds must be >= 0");
        auto u = static_cast<std::uint64_t>(v);
        if (name == "data_seed") cfg.seeds.data = u;
        else if (name == "init_seed") cfg.seeds.init = u;
        else if (name == "attack_seed") cfg.seeds.attack = u;
        else cfg.seeds.noise = u;
    } else {
        throw ConfigError("unsupported sweep parameter '" + name +
                          "'; supported: lambda, alpha, gamma, iterations, update_noise_std, "
                          "theta, het_alpha, het_beta, noise_var, eta, kappa, tau, "
                          "data_seed, init_seed, attack_seed, noise_seed");
    }
}

inline int cmd_sweep(const std::string& config_path, const std::string& param,
                     const std::vector<std::string>& values, const std::string& out_dir,
                     bool force, int threads) {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    ExperimentConfig base = parse_config(read_text_file(config_path));
    prepare_out_dir(out_dir, force);
    fs::path out(out_dir);

    static const char* kMetrics[] = {"local_train_loss", "global_train_loss", "local_train_acc",
                                     "local_test_acc", "global_test_acc"};
    static const char* kStats[] = {"min", "mean", "std", "max", "p12_5", "p87_5"};

    std::string csv = param;
    csv += ",iteration,agents,stopped";
    for (const char* m : kMetrics)
        for (const char* s : kStats) {
            csv += ',';
            csv += m;
            csv += '_';
            csv += s;
        }
    csv += '\n';

    for (const std::string& v : values) {
        ExperimentConfig cfg = base;
        apply_sweep_value(cfg, param, v);
        fs::path sub = out / (param + "=" + v);
        prepare_out_dir(sub, force);

        BuiltExperiment b = build_experiment(cfg, threads);
        write_text_file((sub / "config.resolved").string(), emit_config(cfg));
        write_text_file((sub / "certificate.json").string(),
                        certificate_json(b.certificate).dump(2) + "\n");
        MetricsTrace trace = run_experiment(b).trace;
        write_text_file((sub / "trace.csv").string(), trace_to_csv(trace));
        TraceSummary s = summarize_trace(trace);
        write_text_file((sub / "summary.json").string(), summary_json(s).dump(2) + "\n");

        csv += v;
        csv += ',' + std::to_string(s.iteration);
        csv += ',' + std::to_string(s.agents);
        csv += ',' + std::to_string(s.stopped_count);
        for (const char* m : kMetrics) {
            const MetricSummary& ms = s.metrics.at(m);
            for (double stat : {ms.min, ms.mean, ms.stddev, ms.max, ms.p12_5, ms.p87_5})
                detail::append_g17(csv += ',', stat);
        }
        csv += '\n';
    }
    write_text_file((out / "sweep.csv").string(), csv);
    return 0;
}

// --- analyze -------------------------------------------------------------------

// Oracle cost heuristic: gradient work per pass over all local data.
inline double analyze_cost(const Problem& pr) {
    if (pr.kind == TaskKind::quadratic)
        return static_cast<double>(pr.n_agents) * static_cast<double>(pr.dim);
    double c = 0.0;
    for (const auto& d : pr.train)
        c += static_cast<double>(d.m()) * static_cast<double>(d.p()) *
             static_cast<double>(std::max<Eigen::Index>(1, pr.classes));
    return c;
}

inline int cmd_analyze(const std::string& run_dir, int threads) {
    fs::path dir(run_dir);
    if (!fs::exists(dir / "config.resolved"))
        throw IoError(run_dir + " has no config.resolved; point analyze at a finished run directory");
    if (!fs::exists(dir / "trace.csv"))
        throw IoError(run_dir + " has no trace.csv; the run did not finish");

    ExperimentConfig cfg = parse_config(read_text_file((dir / "config.resolved").string()));
    BuiltExperiment b = build_experiment(cfg, threads);

    constexpr double kMaxOracleCost = 5e6; // ~one fast gradient pass
    if (analyze_cost(b.problem) > kMaxOracleCost) {
        std::cout << "analyze: problem too large for oracle computation; nothing written\n";
        return 0;
    }
    if (!b.certificate.convergent) {
        std::cout << "analyze: zeta = " << b.certificate.zeta
                  << " >= 1, fixed-point oracles do not apply; nothing written\n";
        return 0;
    }

    FixedPointReport rep = compute_fixed_points(b.problem, b.graph, b.w, b.controls.alpha,
                                                b.controls.lambdas);
    HeterogeneityReport het = dgd_suboptimality_bound(rep, b.problem.constants(), b.problem);
    nlohmann::json j;
    j["alpha"] = b.controls.alpha;
    j["zeta"] = b.certificate.zeta;
    j["x_star"] = param_json(rep.x_star);
    j["x_star_local"] = param_list_json(rep.x_star_local);
    j["x_bar"] = param_list_json(rep.x_bar);
    j["x_hat"] = param_list_json(rep.x_hat);
    j["residual_star"] = rep.residual_star;
    j["residual_local"] = rep.residual_local;
    j["residual_bar"] = rep.residual_bar;
    j["heterogeneity"] = {{"big_d", het.big_d}, {"c_const", het.c_const},
                          {"distance", het.distance}};
    write_text_file((dir / "fixed_points.json").string(), j.dump(2) + "\n");

    // The distance-to-limit envelope applies to the plain and stubborn
    // consensus recursions without unbounded corruption or update noise.
    bool envelope_applies =
        (cfg.algorithm == Algorithm::dgd || cfg.algorithm == Algorithm::fj_dgd_2) &&
        cfg.update_noise_std == 0.0 && (!cfg.attack || cfg.attack->tau > 0.0);
    if (!envelope_applies) {
        std::cout << "analyze: wrote fixed_points.json; envelope bound does not apply "
                     "to this run (no bounds.csv)\n";
        return 0;
    }

    RunControls rc = b.controls;
    rc.capture_trajectory = true;
    RunResult res = run_loop(b.problem, b.graph, b.w, rc);
    double tau = cfg.attack ? cfg.attack->tau : 0.0;

    std::string csv = "iteration,measured,envelope\n";
    double d0 = 0.0;
    for (std::size_t k = 0; k < res.trajectory.size(); ++k) {
        double d2 = 0.0;
        for (int i = 0; i < b.problem.n_agents; ++i)
            d2 += (res.trajectory[k][static_cast<std::size_t>(i)] -
                   rep.x_hat[static_cast<std::size_t>(i)])
                      .squaredNorm();
        double measured = std::sqrt(d2);
        if (k == 0) d0 = measured;
        double env = noise_envelope(static_cast<long>(k), b.certificate.zeta, tau,
                                    b.controls.lambdas, d0);
        csv += std::to_string(k);
        detail::append_g17(csv += ',', measured);
        detail::append_g17(csv += ',', env);
        csv += '\n';
    }
    write_text_file((dir / "bounds.csv").string(), csv);
    return 0;
}

} // namespace fjdgd
