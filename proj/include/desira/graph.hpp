#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <queue>
#include <stdexcept>
#include <utility>
#include <vector>

#include "desira/matrix.hpp"
#include "desira/stats.hpp"

namespace desira {

struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct Edge {
    int u = 0;
    int v = 0;
    /// Intermittent links are subject to per-iteration up/down sampling.
    bool intermittent = false;
    /// Probability the link is up in a given iteration (before dropout).
    double up_prob = 1.0;
    friend bool operator==(const Edge&, const Edge&) = default;
};

/**
 * @brief Undirected communication topology with Metropolis mixing weights.
 *
 * Each edge (i, j) carries weight 1 / (1 + max(deg_i, deg_j)); the self
 * weight absorbs the remainder of the row. The resulting mixing matrix is
 * symmetric and doubly stochastic on any graph.
 */
struct CommGraph {
    std::size_t n = 0;
    double radius = 0.0;
    std::vector<Edge> edges;
    /// neighbors[i] holds (neighbor, edge index) pairs.
    std::vector<std::vector<std::pair<int, int>>> neighbors;
    std::vector<double> edge_weight;
    std::vector<double> self_weight;

    std::size_t degree(std::size_t i) const { return neighbors[i].size(); }

    double mean_degree() const {
        if (n == 0) return 0.0;
        return 2.0 * static_cast<double>(edges.size()) / static_cast<double>(n);
    }

    bool has_intermittent() const {
        return std::any_of(edges.begin(), edges.end(), [](const Edge& e) { return e.intermittent; });
    }
};

/// Builds adjacency and Metropolis weights. Self-loops and duplicate edges are rejected.
inline CommGraph build_from_edges(std::size_t n, std::vector<Edge> edges, double radius = 0.0) {
    CommGraph g;
    g.n = n;
    g.radius = radius;
    g.neighbors.assign(n, {});
    for (auto& e : edges) {
        if (e.u < 0 || e.v < 0 || static_cast<std::size_t>(e.u) >= n || static_cast<std::size_t>(e.v) >= n) {
            throw std::out_of_range("build_from_edges: endpoint out of range");
        }
        if (e.u == e.v) throw std::invalid_argument("build_from_edges: self-loop");
        if (e.u > e.v) std::swap(e.u, e.v);
    }
    std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
        return a.u != b.u ? a.u < b.u : a.v < b.v;
    });
    for (std::size_t k = 1; k < edges.size(); ++k) {
        if (edges[k].u == edges[k - 1].u && edges[k].v == edges[k - 1].v) {
            throw std::invalid_argument("build_from_edges: duplicate edge");
        }
    }
    g.edges = std::move(edges);
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
        const auto& e = g.edges[k];
        g.neighbors[e.u].emplace_back(e.v, static_cast<int>(k));
        g.neighbors[e.v].emplace_back(e.u, static_cast<int>(k));
    }
    g.edge_weight.resize(g.edges.size());
    g.self_weight.assign(n, 1.0);
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
        const auto& e = g.edges[k];
        const double w = 1.0 / (1.0 + static_cast<double>(std::max(g.degree(e.u), g.degree(e.v))));
        g.edge_weight[k] = w;
        g.self_weight[e.u] -= w;
        g.self_weight[e.v] -= w;
    }
    return g;
}

/// Edge iff Euclidean distance <= radius.
inline CommGraph build_geometric(const std::vector<Point>& positions, double radius) {
    if (!(radius > 0.0)) throw std::invalid_argument("build_geometric: radius must be positive");
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        for (std::size_t j = i + 1; j < positions.size(); ++j) {
            if (distance(positions[i], positions[j]) <= radius) {
                edges.push_back({static_cast<int>(i), static_cast<int>(j)});
            }
        }
    }
    return build_from_edges(positions.size(), std::move(edges), radius);
}

inline CommGraph build_complete(std::size_t n) {
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) edges.push_back({static_cast<int>(i), static_cast<int>(j)});
    }
    return build_from_edges(n, std::move(edges), std::numeric_limits<double>::infinity());
}

/**
 * Ring within each orbital plane, plus links between same-index satellites
 * of adjacent planes. Inter-plane links are flagged intermittent with the
 * given per-iteration up-probability. Node id = plane * per_plane + slot.
 */
inline CommGraph build_constellation(int planes, int per_plane, double interplane_up_prob) {
    if (planes < 1 || per_plane < 1) throw std::invalid_argument("build_constellation: planes and per_plane must be >= 1");
    std::vector<Edge> edges;
    auto id = [per_plane](int p, int s) { return p * per_plane + s; };
    for (int p = 0; p < planes; ++p) {
        // ring; degenerate rings of size 1 or 2 collapse to no edge or a single edge
        if (per_plane == 2) {
            edges.push_back({id(p, 0), id(p, 1)});
        } else if (per_plane > 2) {
            for (int s = 0; s < per_plane; ++s) edges.push_back({id(p, s), id(p, (s + 1) % per_plane)});
        }
    }
    // adjacent planes; with more than two planes the seam wraps around
    const int links = planes > 2 ? planes : planes - 1;
    for (int p = 0; p < links; ++p) {
        const int q = (p + 1) % planes;
        for (int s = 0; s < per_plane; ++s) {
            edges.push_back({id(p, s), id(q, s), true, interplane_up_prob});
        }
    }
    return build_from_edges(static_cast<std::size_t>(planes * per_plane), std::move(edges), 1.0);
}

/// Per-iteration link state: intermittent edges are up with probability up_prob * (1 - dropout_prob).
inline std::vector<bool> sample_link_mask(const CommGraph& g, RngStream& rng, double dropout_prob) {
    std::vector<bool> up(g.edges.size(), true);
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
        const auto& e = g.edges[k];
        if (!e.intermittent) continue;
        up[k] = rng.bernoulli(e.up_prob * (1.0 - dropout_prob));
    }
    return up;
}

/// Component label per node, considering only edges that are up (all edges if mask is empty).
inline std::vector<int> component_labels(const CommGraph& g, const std::vector<bool>& mask = {}) {
    std::vector<int> label(g.n, -1);
    int next = 0;
    for (std::size_t s = 0; s < g.n; ++s) {
        if (label[s] >= 0) continue;
        std::queue<std::size_t> q;
        q.push(s);
        label[s] = next;
        while (!q.empty()) {
            const auto i = q.front();
            q.pop();
            for (auto [j, k] : g.neighbors[i]) {
                if (!mask.empty() && !mask[k]) continue;
                if (label[j] < 0) {
                    label[j] = next;
                    q.push(static_cast<std::size_t>(j));
                }
            }
        }
        ++next;
    }
    return label;
}

inline int component_count(const CommGraph& g, const std::vector<bool>& mask = {}) {
    const auto labels = component_labels(g, mask);
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

/// BFS from node 0 reaches every node.
inline bool is_connected(const CommGraph& g, const std::vector<bool>& mask = {}) {
    if (g.n == 0) return true;
    const auto labels = component_labels(g, mask);
    return std::all_of(labels.begin(), labels.end(), [](int l) { return l == 0; });
}

/**
 * @brief k rounds of synchronous Metropolis mixing over per-node vectors.
 *
 * values is n x k (one row per node). Dropped links (mask false) fold their
 * weight into both endpoints' self weights, so every round stays symmetric
 * and doubly stochastic and the column means are preserved.
 */
inline Matrix gossip_average(const CommGraph& g, const Matrix& values, int k_rounds, const std::vector<bool>& mask = {}) {
    if (k_rounds < 1) throw std::invalid_argument("gossip_average: k_rounds must be >= 1");
    if (values.rows() != g.n) throw std::invalid_argument("gossip_average: row count must equal node count");
    if (!mask.empty() && mask.size() != g.edges.size()) throw std::invalid_argument("gossip_average: mask size mismatch");

    std::vector<double> self = g.self_weight;
    if (!mask.empty()) {
        for (std::size_t k = 0; k < g.edges.size(); ++k) {
            if (mask[k]) continue;
            self[g.edges[k].u] += g.edge_weight[k];
            self[g.edges[k].v] += g.edge_weight[k];
        }
    }
    const std::size_t dim = values.cols();
    Matrix cur = values;
    Matrix nxt(values.rows(), dim);
    for (int r = 0; r < k_rounds; ++r) {
        for (std::size_t i = 0; i < g.n; ++i) {
            auto out = nxt.row(i);
            const auto mine = cur.row(i);
            for (std::size_t c = 0; c < dim; ++c) out[c] = self[i] * mine[c];
            for (auto [j, k] : g.neighbors[i]) {
                if (!mask.empty() && !mask[k]) continue;
                const double w = g.edge_weight[k];
                const auto theirs = cur.row(static_cast<std::size_t>(j));
                for (std::size_t c = 0; c < dim; ++c) out[c] += w * theirs[c];
            }
        }
        std::swap(cur, nxt);
    }
    return cur;
}

/// Radius whose geometric graph on these positions has mean degree closest to target (bisection).
inline double radius_for_mean_degree(const std::vector<Point>& positions, double target_degree) {
    if (positions.size() < 2) return 0.1;
    double lo = 1e-6;
    double hi = std::numbers::sqrt2;
    for (int it = 0; it < 50; ++it) {
        const double mid = 0.5 * (lo + hi);
        std::size_t count = 0;
        for (std::size_t i = 0; i < positions.size(); ++i) {
            for (std::size_t j = i + 1; j < positions.size(); ++j) {
                if (distance(positions[i], positions[j]) <= mid) ++count;
            }
        }
        const double deg = 2.0 * static_cast<double>(count) / static_cast<double>(positions.size());
        if (deg < target_degree) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return hi;
}

}  // namespace desira
