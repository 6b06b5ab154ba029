#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "fjdgd/errors.hpp"
#include "fjdgd/rng.hpp"

// Communication graphs and their Metropolis mixing matrices.

namespace fjdgd {

struct Graph {
    int n_agents = 0;
    // Canonical form: each edge stored once as (i, j) with i < j, sorted.
    std::vector<std::array<int, 2>> edges;
    // Sorted neighbor lists, derived from edges at construction.
    std::vector<std::vector<int>> adjacency;

    int degree(int i) const { return static_cast<int>(adjacency[i].size()); }
};

namespace detail {

inline bool is_connected(int n, const std::vector<std::vector<int>>& adj) {
    if (n <= 0) return false;
    std::vector<char> seen(n, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int count = 1;
    while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        for (int v : adj[u]) {
            if (!seen[v]) {
                seen[v] = 1;
                ++count;
                stack.push_back(v);
            }
        }
    }
    return count == n;
}

} // namespace detail

// Build a Graph from raw pairs: canonicalizes, deduplicates, validates ids,
// rejects self-loops and disconnected graphs.
inline Graph make_graph(int n_agents, std::vector<std::array<int, 2>> raw_edges) {
    if (n_agents < 1)
        throw TopologyError("graph needs at least one agent, got " + std::to_string(n_agents));
    for (auto& e : raw_edges) {
        if (e[0] < 0 || e[0] >= n_agents || e[1] < 0 || e[1] >= n_agents)
            throw TopologyError("edge (" + std::to_string(e[0]) + "," + std::to_string(e[1]) +
                                ") out of range for " + std::to_string(n_agents) + " agents");
        if (e[0] == e[1])
            throw TopologyError("self-loop on agent " + std::to_string(e[0]));
        if (e[0] > e[1]) std::swap(e[0], e[1]);
    }
    std::sort(raw_edges.begin(), raw_edges.end());
    raw_edges.erase(std::unique(raw_edges.begin(), raw_edges.end()), raw_edges.end());

    Graph g;
    g.n_agents = n_agents;
    g.edges = std::move(raw_edges);
    g.adjacency.assign(n_agents, {});
    for (const auto& e : g.edges) {
        g.adjacency[e[0]].push_back(e[1]);
        g.adjacency[e[1]].push_back(e[0]);
    }
    for (auto& nbrs : g.adjacency) std::sort(nbrs.begin(), nbrs.end());

    if (!detail::is_connected(g.n_agents, g.adjacency))
        throw TopologyError("graph is not connected");
    return g;
}

// Cycle over N agents: i -- i+1 (mod N).
inline Graph build_ring(int n_agents) {
    if (n_agents < 3)
        throw TopologyError("ring needs at least 3 agents, got " + std::to_string(n_agents));
    std::vector<std::array<int, 2>> edges;
    for (int i = 0; i < n_agents; ++i)
        edges.push_back({i, (i + 1) % n_agents});
    return make_graph(n_agents, std::move(edges));
}

// Circulant graph: agent i connected to i +- 1, ..., i +- half_width (mod N),
// so every degree is 2*half_width.
inline Graph build_circulant(int n_agents, int half_width) {
    if (half_width < 1)
        throw TopologyError("circulant half_width must be positive");
    if (2 * half_width >= n_agents)
        throw TopologyError("circulant needs 2*half_width < n_agents (got " +
                            std::to_string(half_width) + " vs " + std::to_string(n_agents) + ")");
    std::vector<std::array<int, 2>> edges;
    for (int i = 0; i < n_agents; ++i)
        for (int k = 1; k <= half_width; ++k)
            edges.push_back({i, (i + k) % n_agents});
    return make_graph(n_agents, std::move(edges));
}

// N points uniform on the unit square, edge where distance <= radius. If the
// draw comes out disconnected the whole placement is redrawn from a derived
// sub-seed, up to `max_retries` times, so the result is still a pure function
// of (n_agents, radius, seed). The accepted placement can be read back through
// `positions_out` for geometric cross-checks.
inline Graph build_random_geometric(int n_agents, double radius, std::uint64_t seed,
                                    int max_retries = 1000,
                                    std::vector<std::array<double, 2>>* positions_out = nullptr) {
    if (n_agents < 1)
        throw TopologyError("graph needs at least one agent");
    if (!(radius > 0.0) || radius > std::sqrt(2.0) + 1e-15)
        throw TopologyError("geometric radius must lie in (0, sqrt(2)]");

    for (int attempt = 0; attempt < max_retries; ++attempt) {
        Rng rng(derive_seed(seed, {0x9e0941u, static_cast<std::uint64_t>(attempt)}));
        std::vector<double> px(n_agents), py(n_agents);
        for (int i = 0; i < n_agents; ++i) {
            px[i] = rng.next_double();
            py[i] = rng.next_double();
        }
        std::vector<std::array<int, 2>> edges;
        const double r2 = radius * radius;
        for (int i = 0; i < n_agents; ++i)
            for (int j = i + 1; j < n_agents; ++j) {
                double dx = px[i] - px[j], dy = py[i] - py[j];
                if (dx * dx + dy * dy <= r2) edges.push_back({i, j});
            }
        std::vector<std::vector<int>> adj(n_agents);
        for (const auto& e : edges) {
            adj[e[0]].push_back(e[1]);
            adj[e[1]].push_back(e[0]);
        }
        if (detail::is_connected(n_agents, adj)) {
            if (positions_out) {
                positions_out->resize(static_cast<std::size_t>(n_agents));
                for (int i = 0; i < n_agents; ++i) (*positions_out)[static_cast<std::size_t>(i)] = {px[i], py[i]};
            }
            return make_graph(n_agents, std::move(edges));
        }
    }
    throw TopologyError("no connected geometric graph after " + std::to_string(max_retries) +
                        " placements; increase radius or n_agents");
}

using MixingMatrix = Eigen::MatrixXd;

// Metropolis rule: w_ij = 1/(1 + max(deg_i, deg_j)) on edges, diagonal takes
// the slack. Symmetric and doubly stochastic by construction.
inline MixingMatrix metropolis_weights(const Graph& g) {
    const int n = g.n_agents;
    MixingMatrix w = MixingMatrix::Zero(n, n);
    for (const auto& e : g.edges) {
        double v = 1.0 / (1.0 + std::max(g.degree(e[0]), g.degree(e[1])));
        w(e[0], e[1]) = v;
        w(e[1], e[0]) = v;
    }
    for (int i = 0; i < n; ++i)
        w(i, i) = 1.0 - w.row(i).sum();
    return w;
}

// Algebraically smallest eigenvalue of a symmetric mixing matrix.
inline double min_eigenvalue(const MixingMatrix& w) {
    if (w.rows() != w.cols())
        throw ContractError("mixing matrix must be square");
    if ((w - w.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw ContractError("mixing matrix must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(w, Eigen::EigenvaluesOnly);
    return solver.eigenvalues()(0);
}

// --- edge-list text format: first line N, then one "i j" line per edge ---

inline std::string graph_to_edge_list(const Graph& g) {
    std::ostringstream out;
    out << g.n_agents << "\n";
    for (const auto& e : g.edges)
        out << e[0] << " " << e[1] << "\n";
    return out.str();
}

inline Graph graph_from_edge_list(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    int n = -1;
    std::vector<std::array<int, 2>> edges;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        if (n < 0) {
            if (!(ls >> n) || n < 1)
                throw DataError("edge list line " + std::to_string(line_no) +
                                ": expected positive agent count");
            continue;
        }
        int i, j;
        if (!(ls >> i)) continue; // blank line
        if (!(ls >> j))
            throw DataError("edge list line " + std::to_string(line_no) +
                            ": expected two agent ids");
        edges.push_back({i, j});
    }
    if (n < 0)
        throw DataError("edge list is empty");
    return make_graph(n, std::move(edges));
}

} // namespace fjdgd
