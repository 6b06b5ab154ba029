#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fjdgd/datagen.hpp"
#include "fjdgd/engine.hpp"
#include "fjdgd/errors.hpp"

// Experiment configuration: a flat `key = value` format with `[section]`
// headers and `#` comments. parse_config validates everything it can without
// building the experiment (ranges, cross-field rules) and reports the first
// error with its line number; emit_config writes the canonical form with all
// defaults materialized, which re-parses to a structurally equal config.

namespace fjdgd {

enum class TopologyKind { ring, circulant, random_geometric, edge_list };
enum class DatasetKind { synthetic_federated, linear_2d, mnist, quadratic };
enum class InitKind { zeros, gaussian };

struct TopologySpec {
    TopologyKind kind = TopologyKind::ring;
    int n_agents = 10;
    int half_width = 2;     // circulant
    double radius = 0.25;   // random_geometric
    std::string path;       // edge_list
    friend bool operator==(const TopologySpec&, const TopologySpec&) = default;
};

struct DatasetSpec {
    DatasetKind kind = DatasetKind::synthetic_federated;
    int dim = 15;                 // synthetic_federated / quadratic
    int samples = 500;            // per agent, synthetic_federated / linear_2d
    double train_fraction = 0.9;  // synthetic_federated / mnist
    double het_alpha = 1.0;       // synthetic_federated
    double het_beta = 1.0;        // synthetic_federated
    double theta = 1.0;           // linear_2d
    double noise_var = 0.01;      // linear_2d
    PartitionMode partition = PartitionMode::hom; // mnist
    int samples_per_agent = 554;  // mnist
    std::string dir;              // mnist (env override applies when empty)
    double curv_min = 1.0;        // quadratic
    double curv_max = 4.0;        // quadratic
    double center_scale = 1.0;    // quadratic
    friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct AttackSpec {
    std::string malicious; // "i,j,k" or "random:K"
    double eta = 5.0;
    double kappa = 5.0;
    double tau = 0.0;
    friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

struct EarlyStopSpec {
    int window = 20;
    int patience = 20;
    friend bool operator==(const EarlyStopSpec&, const EarlyStopSpec&) = default;
};

struct SeedsSpec {
    std::uint64_t data = 1;
    std::uint64_t init = 2;
    std::uint64_t attack = 3;
    std::uint64_t noise = 4;
    friend bool operator==(const SeedsSpec&, const SeedsSpec&) = default;
};

struct ExperimentConfig {
    Algorithm algorithm = Algorithm::dgd;
    bool alpha_auto = true;
    double alpha = 0.0;               // used when !alpha_auto
    std::vector<double> lambda;       // empty = unset; size 1 = broadcast
    long iterations = 1000;
    double gamma = 0.01;
    double update_noise_std = 0.0;
    long metrics_stride = 1;
    long global_loss_subset = 0;      // 0 = use the full pooled dataset
    InitKind init = InitKind::zeros;
    double init_scale = 1.0;
    TopologySpec topology;
    DatasetSpec dataset;
    std::optional<AttackSpec> attack;
    std::optional<EarlyStopSpec> early_stopping;
    SeedsSpec seeds;
    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

struct ConfigEntry {
    int line = 0;
    std::string key;
    std::string value;
};

[[noreturn]] inline void bad_value(const ConfigEntry& e, const std::string& why) {
    throw ConfigError("line " + std::to_string(e.line) + ": key '" + e.key + "': " + why);
}

inline long to_long(const ConfigEntry& e) {
    try {
        std::size_t pos = 0;
        long v = std::stol(e.value, &pos);
        if (pos != e.value.size()) bad_value(e, "expected an integer, got '" + e.value + "'");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        bad_value(e, "expected an integer, got '" + e.value + "'");
    }
}

inline std::uint64_t to_u64(const ConfigEntry& e) {
    try {
        std::size_t pos = 0;
        unsigned long long v = std::stoull(e.value, &pos);
        if (pos != e.value.size() || e.value[0] == '-')
            bad_value(e, "expected a non-negative integer, got '" + e.value + "'");
        return static_cast<std::uint64_t>(v);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        bad_value(e, "expected a non-negative integer, got '" + e.value + "'");
    }
}

inline double to_double(const ConfigEntry& e) {
    try {
        std::size_t pos = 0;
        double v = std::stod(e.value, &pos);
        if (pos != e.value.size()) bad_value(e, "expected a number, got '" + e.value + "'");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        bad_value(e, "expected a number, got '" + e.value + "'");
    }
}

inline std::vector<double> to_double_list(const ConfigEntry& e) {
    std::vector<double> out;
    std::string item;
    std::stringstream ss(e.value);
    while (std::getline(ss, item, ',')) {
        ConfigEntry sub{e.line, e.key, trim(item)};
        if (sub.value.empty()) bad_value(e, "empty element in list '" + e.value + "'");
        out.push_back(to_double(sub));
    }
    if (out.empty()) bad_value(e, "expected a number or comma-separated list");
    return out;
}

inline std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Raw sectioned entries in file order, before interpretation.
inline std::map<std::string, std::vector<ConfigEntry>> tokenize_config(const std::string& text) {
    std::map<std::string, std::vector<ConfigEntry>> sections;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    std::set<std::string> seen; // "section\x1fkey" for duplicate detection
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" +
                              line + "'");
        ConfigEntry e;
        e.line = lineno;
        e.key = trim(line.substr(0, eq));
        e.value = trim(line.substr(eq + 1));
        if (e.key.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": missing key before '='");
        if (e.value.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": missing value for key '" +
                              e.key + "'");
        std::string id = section + '\x1f' + e.key;
        if (!seen.insert(id).second)
            throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + e.key +
                              (section.empty() ? std::string("'") : "' in section [" + section + "]"));
        sections[section].push_back(e);
    }
    return sections;
}

[[noreturn]] inline void unknown_key(const ConfigEntry& e, const std::string& section) {
    throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + e.key +
                      (section.empty() ? std::string("'")
                                       : "' in section [" + section + "]"));
}

inline void check_malicious_syntax(const ConfigEntry& e) {
    const std::string& v = e.value;
    if (v.rfind("random:", 0) == 0) {
        ConfigEntry sub{e.line, e.key, v.substr(7)};
        long k = to_long(sub);
        if (k < 1) bad_value(e, "random:<count> needs a positive count");
        return;
    }
    std::stringstream ss(v);
    std::string item;
    bool any = false;
    while (std::getline(ss, item, ',')) {
        ConfigEntry sub{e.line, e.key, trim(item)};
        if (sub.value.empty()) bad_value(e, "empty element in agent list");
        if (to_long(sub) < 0) bad_value(e, "agent ids must be non-negative");
        any = true;
    }
    if (!any) bad_value(e, "expected agent ids 'i,j,...' or 'random:<count>'");
}

} // namespace detail

inline std::string algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::dgd: return "dgd";
        case Algorithm::atc: return "atc";
        case Algorithm::ed: return "ed";
        case Algorithm::local_gd: return "local_gd";
        case Algorithm::fj_dgd_1: return "fj_dgd_1";
        case Algorithm::fj_dgd_2: return "fj_dgd_2";
    }
    throw ContractError("unreachable algorithm enum");
}

inline ExperimentConfig parse_config(const std::string& text) {
    using detail::ConfigEntry;
    ExperimentConfig cfg;
    auto sections = detail::tokenize_config(text);

    bool have_algorithm = false;
    bool have_malicious = false;

    for (const auto& [section, entries] : sections) {
        if (section.empty()) {
            for (const auto& e : entries) {
                if (e.key == "algorithm") {
                    have_algorithm = true;
                    if (e.value == "dgd") cfg.algorithm = Algorithm::dgd;
                    else if (e.value == "atc") cfg.algorithm = Algorithm::atc;
                    else if (e.value == "ed") cfg.algorithm = Algorithm::ed;
                    else if (e.value == "local_gd") cfg.algorithm = Algorithm::local_gd;
                    else if (e.value == "fj_dgd_1") cfg.algorithm = Algorithm::fj_dgd_1;
                    else if (e.value == "fj_dgd_2") cfg.algorithm = Algorithm::fj_dgd_2;
                    else detail::bad_value(e, "expected one of dgd, atc, ed, local_gd, fj_dgd_1, fj_dgd_2");
                } else if (e.key == "alpha") {
                    if (e.value == "auto") {
                        cfg.alpha_auto = true;
                        cfg.alpha = 0.0;
                    } else {
                        cfg.alpha_auto = false;
                        cfg.alpha = detail::to_double(e);
                        if (!(cfg.alpha > 0.0)) detail::bad_value(e, "alpha must be positive or 'auto'");
                    }
                } else if (e.key == "lambda") {
                    cfg.lambda = detail::to_double_list(e);
                    for (double v : cfg.lambda)
                        if (!(v >= 0.0 && v <= 1.0))
                            detail::bad_value(e, "lambda values must lie in [0, 1], got " +
                                                     detail::g17(v));
                } else if (e.key == "iterations") {
                    cfg.iterations = detail::to_long(e);
                    if (cfg.iterations < 0) detail::bad_value(e, "iterations must be >= 0");
                } else if (e.key == "gamma") {
                    cfg.gamma = detail::to_double(e);
                    if (!(cfg.gamma > 0.0)) detail::bad_value(e, "gamma must be positive");
                } else if (e.key == "update_noise_std") {
                    cfg.update_noise_std = detail::to_double(e);
                    if (!(cfg.update_noise_std >= 0.0))
                        detail::bad_value(e, "update_noise_std must be >= 0");
                } else if (e.key == "metrics_stride") {
                    cfg.metrics_stride = detail::to_long(e);
                    if (cfg.metrics_stride < 1) detail::bad_value(e, "metrics_stride must be >= 1");
                } else if (e.key == "global_loss_subset") {
                    cfg.global_loss_subset = detail::to_long(e);
                    if (cfg.global_loss_subset < 0)
                        detail::bad_value(e, "global_loss_subset must be >= 0 (0 = full pool)");
                } else if (e.key == "init") {
                    if (e.value == "zeros") cfg.init = InitKind::zeros;
                    else if (e.value == "gaussian") cfg.init = InitKind::gaussian;
                    else detail::bad_value(e, "expected 'zeros' or 'gaussian'");
                } else if (e.key == "init_scale") {
                    cfg.init_scale = detail::to_double(e);
                    if (!(cfg.init_scale > 0.0)) detail::bad_value(e, "init_scale must be positive");
                } else {
                    detail::unknown_key(e, section);
                }
            }
        } else if (section == "topology") {
            for (const auto& e : entries) {
                if (e.key == "kind") {
                    if (e.value == "ring") cfg.topology.kind = TopologyKind::ring;
                    else if (e.value == "circulant") cfg.topology.kind = TopologyKind::circulant;
                    else if (e.value == "random_geometric")
                        cfg.topology.kind = TopologyKind::random_geometric;
                    else if (e.value == "edge_list") cfg.topology.kind = TopologyKind::edge_list;
                    else detail::bad_value(e, "expected ring, circulant, random_geometric, or edge_list");
                } else if (e.key == "n_agents") {
                    cfg.topology.n_agents = static_cast<int>(detail::to_long(e));
                    if (cfg.topology.n_agents < 1) detail::bad_value(e, "n_agents must be >= 1");
                } else if (e.key == "half_width") {
                    cfg.topology.half_width = static_cast<int>(detail::to_long(e));
                    if (cfg.topology.half_width < 1) detail::bad_value(e, "half_width must be >= 1");
                } else if (e.key == "radius") {
                    cfg.topology.radius = detail::to_double(e);
                    if (!(cfg.topology.radius > 0.0)) detail::bad_value(e, "radius must be positive");
                } else if (e.key == "path") {
                    cfg.topology.path = e.value;
                } else {
                    detail::unknown_key(e, section);
                }
            }
        } else if (section == "dataset") {
            for (const auto& e : entries) {
                if (e.key == "kind") {
                    if (e.value == "synthetic_federated")
                        cfg.dataset.kind = DatasetKind::synthetic_federated;
                    else if (e.value == "linear_2d") cfg.dataset.kind = DatasetKind::linear_2d;
                    else if (e.value == "mnist") cfg.dataset.kind = DatasetKind::mnist;
                    else if (e.value == "quadratic") cfg.dataset.kind = DatasetKind::quadratic;
                    else detail::bad_value(e, "expected synthetic_federated, linear_2d, mnist, or quadratic");
                } else if (e.key == "dim") {
                    cfg.dataset.dim = static_cast<int>(detail::to_long(e));
                    if (cfg.dataset.dim < 1) detail::bad_value(e, "dim must be >= 1");
                } else if (e.key == "samples") {
                    cfg.dataset.samples = static_cast<int>(detail::to_long(e));
                    if (cfg.dataset.samples < 2) detail::bad_value(e, "samples must be >= 2");
                } else if (e.key == "train_fraction") {
                    cfg.dataset.train_fraction = detail::to_double(e);
                    if (!(cfg.dataset.train_fraction > 0.0 && cfg.dataset.train_fraction < 1.0))
                        detail::bad_value(e, "train_fraction must lie strictly between 0 and 1");
                } else if (e.key == "het_alpha") {
                    cfg.dataset.het_alpha = detail::to_double(e);
                    if (!(cfg.dataset.het_alpha >= 0.0)) detail::bad_value(e, "het_alpha must be >= 0");
                } else if (e.key == "het_beta") {
                    cfg.dataset.het_beta = detail::to_double(e);
                    if (!(cfg.dataset.het_beta >= 0.0)) detail::bad_value(e, "het_beta must be >= 0");
                } else if (e.key == "theta") {
                    cfg.dataset.theta = detail::to_double(e);
                    if (!(cfg.dataset.theta > 0.0)) detail::bad_value(e, "theta must be positive");
                } else if (e.key == "noise_var") {
                    cfg.dataset.noise_var = detail::to_double(e);
                    if (!(cfg.dataset.noise_var >= 0.0)) detail::bad_value(e, "noise_var must be >= 0");
                } else if (e.key == "partition") {
                    if (e.value == "hom") cfg.dataset.partition = PartitionMode::hom;
                    else if (e.value == "het2") cfg.dataset.partition = PartitionMode::het2;
                    else if (e.value == "het5") cfg.dataset.partition = PartitionMode::het5;
                    else detail::bad_value(e, "expected hom, het2, or het5");
                } else if (e.key == "samples_per_agent") {
                    cfg.dataset.samples_per_agent = static_cast<int>(detail::to_long(e));
                    if (cfg.dataset.samples_per_agent < 2)
                        detail::bad_value(e, "samples_per_agent must be >= 2");
                } else if (e.key == "dir") {
                    cfg.dataset.dir = e.value;
                } else if (e.key == "curv_min") {
                    cfg.dataset.curv_min = detail::to_double(e);
                    if (!(cfg.dataset.curv_min > 0.0)) detail::bad_value(e, "curv_min must be positive");
                } else if (e.key == "curv_max") {
                    cfg.dataset.curv_max = detail::to_double(e);
                    if (!(cfg.dataset.curv_max > 0.0)) detail::bad_value(e, "curv_max must be positive");
                } else if (e.key == "center_scale") {
                    cfg.dataset.center_scale = detail::to_double(e);
                    if (!(cfg.dataset.center_scale >= 0.0))
                        detail::bad_value(e, "center_scale must be >= 0");
                } else {
                    detail::unknown_key(e, section);
                }
            }
        } else if (section == "attack") {
            AttackSpec a;
            for (const auto& e : entries) {
                if (e.key == "malicious") {
                    detail::check_malicious_syntax(e);
                    a.malicious = e.value;
                    have_malicious = true;
                } else if (e.key == "eta") {
                    a.eta = detail::to_double(e);
                    if (!(a.eta >= 0.0)) detail::bad_value(e, "eta must be >= 0");
                } else if (e.key == "kappa") {
                    a.kappa = detail::to_double(e);
                    if (!(a.kappa >= 0.0)) detail::bad_value(e, "kappa must be >= 0");
                } else if (e.key == "tau") {
                    a.tau = detail::to_double(e);
                    if (!(a.tau >= 0.0)) detail::bad_value(e, "tau must be >= 0");
                } else {
                    detail::unknown_key(e, section);
                }
            }
            cfg.attack = a;
        } else if (section == "early_stopping") {
            EarlyStopSpec es;
            for (const auto& e : entries) {
                if (e.key == "window") {
                    es.window = static_cast<int>(detail::to_long(e));
                    if (es.window < 1) detail::bad_value(e, "window must be >= 1");
                } else if (e.key == "patience") {
                    es.patience = static_cast<int>(detail::to_long(e));
                    if (es.patience < 1) detail::bad_value(e, "patience must be >= 1");
                } else {
                    detail::unknown_key(e, section);
                }
            }
            cfg.early_stopping = es;
        } else if (section == "seeds") {
            for (const auto& e : entries) {
                if (e.key == "data") cfg.seeds.data = detail::to_u64(e);
                else if (e.key == "init") cfg.seeds.init = detail::to_u64(e);
                else if (e.key == "attack") cfg.seeds.attack = detail::to_u64(e);
                else if (e.key == "noise") cfg.seeds.noise = detail::to_u64(e);
                else detail::unknown_key(e, section);
            }
        } else {
            throw ConfigError("line " + std::to_string(entries.front().line) +
                              ": unknown section [" + section + "]");
        }
    }

    // Cross-field checks and default materialization.
    if (!have_algorithm) throw ConfigError("missing required key 'algorithm'");
    if (cfg.attack && !have_malicious)
        throw ConfigError("section [attack] needs key 'malicious' (agent ids or random:<count>)");
    if (!cfg.lambda.empty() && !is_fj(cfg.algorithm))
        throw ConfigError("key 'lambda' only applies to fj_dgd_1 and fj_dgd_2, not " +
                          algorithm_name(cfg.algorithm));
    if (cfg.lambda.empty() && is_fj(cfg.algorithm)) cfg.lambda = {0.5};
    if (cfg.topology.kind == TopologyKind::edge_list && cfg.topology.path.empty())
        throw ConfigError("topology kind edge_list needs key 'path'");
    if (cfg.dataset.kind == DatasetKind::quadratic && cfg.dataset.curv_max < cfg.dataset.curv_min)
        throw ConfigError("dataset curv_max must be >= curv_min");
    return cfg;
}

// Canonical form: all defaults materialized, fixed key order, numbers in
// shortest exact form. parse_config(emit_config(c)) == c.
inline std::string emit_config(const ExperimentConfig& cfg) {
    using detail::g17;
    std::string out;
    auto kv = [&out](const std::string& k, const std::string& v) {
        out += k;
        out += " = ";
        out += v;
        out += '\n';
    };
    kv("algorithm", algorithm_name(cfg.algorithm));
    kv("alpha", cfg.alpha_auto ? "auto" : g17(cfg.alpha));
    if (!cfg.lambda.empty()) {
        std::string v;
        for (std::size_t i = 0; i < cfg.lambda.size(); ++i) {
            if (i) v += ", ";
            v += g17(cfg.lambda[i]);
        }
        kv("lambda", v);
    }
    kv("iterations", std::to_string(cfg.iterations));
    kv("gamma", g17(cfg.gamma));
    kv("update_noise_std", g17(cfg.update_noise_std));
    kv("metrics_stride", std::to_string(cfg.metrics_stride));
    kv("global_loss_subset", std::to_string(cfg.global_loss_subset));
    kv("init", cfg.init == InitKind::zeros ? "zeros" : "gaussian");
    kv("init_scale", g17(cfg.init_scale));

    out += "\n[topology]\n";
    switch (cfg.topology.kind) {
        case TopologyKind::ring:
            kv("kind", "ring");
            kv("n_agents", std::to_string(cfg.topology.n_agents));
            break;
        case TopologyKind::circulant:
            kv("kind", "circulant");
            kv("n_agents", std::to_string(cfg.topology.n_agents));
            kv("half_width", std::to_string(cfg.topology.half_width));
            break;
        case TopologyKind::random_geometric:
            kv("kind", "random_geometric");
            kv("n_agents", std::to_string(cfg.topology.n_agents));
            kv("radius", g17(cfg.topology.radius));
            break;
        case TopologyKind::edge_list:
            kv("kind", "edge_list");
            kv("path", cfg.topology.path);
            break;
    }

    out += "\n[dataset]\n";
    switch (cfg.dataset.kind) {
        case DatasetKind::synthetic_federated:
            kv("kind", "synthetic_federated");
            kv("dim", std::to_string(cfg.dataset.dim));
            kv("samples", std::to_string(cfg.dataset.samples));
            kv("train_fraction", g17(cfg.dataset.train_fraction));
            kv("het_alpha", g17(cfg.dataset.het_alpha));
            kv("het_beta", g17(cfg.dataset.het_beta));
            break;
        case DatasetKind::linear_2d:
            kv("kind", "linear_2d");
            kv("samples", std::to_string(cfg.dataset.samples));
            kv("theta", g17(cfg.dataset.theta));
            kv("noise_var", g17(cfg.dataset.noise_var));
            break;
        case DatasetKind::mnist:
            kv("kind", "mnist");
            kv("partition", cfg.dataset.partition == PartitionMode::hom
                                ? "hom"
                                : (cfg.dataset.partition == PartitionMode::het2 ? "het2" : "het5"));
            kv("samples_per_agent", std::to_string(cfg.dataset.samples_per_agent));
            kv("train_fraction", g17(cfg.dataset.train_fraction));
            if (!cfg.dataset.dir.empty()) kv("dir", cfg.dataset.dir);
            break;
        case DatasetKind::quadratic:
            kv("kind", "quadratic");
            kv("dim", std::to_string(cfg.dataset.dim));
            kv("curv_min", g17(cfg.dataset.curv_min));
            kv("curv_max", g17(cfg.dataset.curv_max));
            kv("center_scale", g17(cfg.dataset.center_scale));
            break;
    }

    if (cfg.attack) {
        out += "\n[attack]\n";
        kv("malicious", cfg.attack->malicious);
        kv("eta", g17(cfg.attack->eta));
        kv("kappa", g17(cfg.attack->kappa));
        kv("tau", g17(cfg.attack->tau));
    }
    if (cfg.early_stopping) {
        out += "\n[early_stopping]\n";
        kv("window", std::to_string(cfg.early_stopping->window));
        kv("patience", std::to_string(cfg.early_stopping->patience));
    }
    out += "\n[seeds]\n";
    kv("data", std::to_string(cfg.seeds.data));
    kv("init", std::to_string(cfg.seeds.init));
    kv("attack", std::to_string(cfg.seeds.attack));
    kv("noise", std::to_string(cfg.seeds.noise));
    return out;
}

} // namespace fjdgd
