#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <utility>
#include <vector>

#include "desira/graph.hpp"

using namespace desira;

namespace {

Matrix dense_mixing(const CommGraph& g) {
    Matrix w(g.n, g.n);
    for (std::size_t i = 0; i < g.n; ++i) w(i, i) = g.self_weight[i];
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
        const auto& e = g.edges[k];
        w(e.u, e.v) = g.edge_weight[k];
        w(e.v, e.u) = g.edge_weight[k];
    }
    return w;
}

std::vector<Point> random_points(std::size_t n, std::uint64_t seed) {
    RngStream rng(seed, 0);
    std::vector<Point> p(n);
    for (auto& q : p) q = {rng.uniform(), rng.uniform()};
    return p;
}

}  // namespace

TEST(Graph, MetropolisWeightsAreDoublyStochasticAndSymmetric) {
    const auto g = build_geometric(random_points(40, 1), 0.25);
    const auto w = dense_mixing(g);
    for (std::size_t i = 0; i < g.n; ++i) {
        EXPECT_NEAR(w.row_sum(i), 1.0, 1e-12);
        EXPECT_NEAR(w.col_sum(i), 1.0, 1e-12);
        EXPECT_GT(w(i, i), 0.0);
    }
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
        const auto& e = g.edges[k];
        const double expect = 1.0 / (1.0 + static_cast<double>(std::max(g.degree(e.u), g.degree(e.v))));
        EXPECT_DOUBLE_EQ(g.edge_weight[k], expect);
    }
}

TEST(Graph, GeometricMatchesBruteForce) {
    const auto pts = random_points(30, 2);
    const double r = 0.3;
    const auto g = build_geometric(pts, r);
    std::set<std::pair<int, int>> got, want;
    for (const auto& e : g.edges) got.insert({std::min(e.u, e.v), std::max(e.u, e.v)});
    for (int i = 0; i < 30; ++i) {
        for (int j = i + 1; j < 30; ++j) {
            const double dx = pts[i].x - pts[j].x, dy = pts[i].y - pts[j].y;
            if (std::sqrt(dx * dx + dy * dy) <= r) want.insert({i, j});
        }
    }
    EXPECT_EQ(got, want);
    EXPECT_THROW(build_geometric(pts, 0.0), std::invalid_argument);
}

TEST(Graph, RejectsSelfLoopsAndDuplicates) {
    EXPECT_THROW(build_from_edges(3, {{0, 0}}), std::invalid_argument);
    EXPECT_THROW(build_from_edges(3, {{0, 1}, {1, 0}}), std::invalid_argument);
    EXPECT_THROW(build_from_edges(3, {{0, 5}}), std::out_of_range);
}

TEST(Graph, ConstellationShape) {
    const auto g = build_constellation(6, 10, 0.7);
    EXPECT_EQ(g.n, 60u);
    EXPECT_EQ(g.edges.size(), 120u);
    int inter = 0;
    for (const auto& e : g.edges) {
        if (e.intermittent) {
            ++inter;
            EXPECT_DOUBLE_EQ(e.up_prob, 0.7);
            EXPECT_EQ(e.u % 10, e.v % 10);
        } else {
            EXPECT_EQ(e.u / 10, e.v / 10);
        }
    }
    EXPECT_EQ(inter, 60);
    for (std::size_t i = 0; i < g.n; ++i) EXPECT_EQ(g.degree(i), 4u);
    EXPECT_TRUE(is_connected(g));
}

TEST(Graph, MaskedComponents) {
    const auto g = build_constellation(6, 10, 1.0);
    std::vector<bool> mask(g.edges.size(), true);
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
        if (g.edges[k].intermittent) mask[k] = false;
    }
    EXPECT_EQ(component_count(g, mask), 6);
    EXPECT_FALSE(is_connected(g, mask));
    EXPECT_EQ(component_count(build_from_edges(5, {{0, 1}, {2, 3}})), 3);
}

TEST(Graph, LinkMaskRespectsDropout) {
    const auto g = build_constellation(6, 10, 1.0);
    RngStream rng(3, 0);
    auto all_up = sample_link_mask(g, rng, 0.0);
    for (bool b : all_up) EXPECT_TRUE(b);
    int up = 0, inter = 0;
    for (int rep = 0; rep < 200; ++rep) {
        const auto m = sample_link_mask(g, rng, 0.3);
        for (std::size_t k = 0; k < g.edges.size(); ++k) {
            if (!g.edges[k].intermittent) {
                EXPECT_TRUE(m[k]);
                continue;
            }
            ++inter;
            up += m[k] ? 1 : 0;
        }
    }
    EXPECT_NEAR(static_cast<double>(up) / inter, 0.7, 0.02);
}

TEST(Graph, GossipPreservesSumAndConverges) {
    const auto g = build_geometric(random_points(50, 4), 0.3);
    ASSERT_TRUE(is_connected(g));
    Matrix x(50, 2);
    RngStream rng(5, 0);
    for (std::size_t k = 0; k < x.size(); ++k) x.data()[k] = rng.uniform(0.0, 10.0);
    const double m0 = x.col_sum(0) / 50.0;
    const auto one = gossip_average(g, x, 1);
    EXPECT_NEAR(one.col_sum(0), x.col_sum(0), 1e-10);
    const auto many = gossip_average(g, x, 500);
    for (std::size_t i = 0; i < 50; ++i) EXPECT_NEAR(many(i, 0), m0, 1e-6);
}

TEST(Graph, GossipWithDroppedLinksStaysInComponent) {
    const auto g = build_from_edges(4, {{0, 1}, {2, 3}, {1, 2, true, 1.0}});
    Matrix x(4, 1);
    x(0, 0) = 4.0;
    std::vector<bool> mask(g.edges.size(), true);
    for (std::size_t k = 0; k < g.edges.size(); ++k) mask[k] = !g.edges[k].intermittent;
    const auto y = gossip_average(g, x, 200, mask);
    EXPECT_NEAR(y(0, 0), 2.0, 1e-9);
    EXPECT_NEAR(y(1, 0), 2.0, 1e-9);
    EXPECT_NEAR(y(2, 0), 0.0, 1e-12);
    EXPECT_NEAR(y(3, 0), 0.0, 1e-12);
}

TEST(Graph, RadiusForMeanDegree) {
    const auto pts = random_points(200, 6);
    const double r = radius_for_mean_degree(pts, 8.0);
    EXPECT_NEAR(build_geometric(pts, r).mean_degree(), 8.0, 0.2);
}

TEST(Graph, CompleteGraph) {
    const auto g = build_complete(6);
    EXPECT_EQ(g.edges.size(), 15u);
    Matrix x(6, 1);
    x(2, 0) = 6.0;
    const auto y = gossip_average(g, x, 1);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(y(i, 0), 1.0, 1e-12);
}

TEST(Graph, SpecExamples) {
    const auto pts = random_points(12, 7);
    EXPECT_EQ(build_geometric(pts, std::sqrt(2.0)).edges.size(), 66u);
    EXPECT_TRUE(build_geometric(pts, 1e-9).edges.empty());
    EXPECT_FALSE(is_connected(build_from_edges(2, {})));
    EXPECT_TRUE(is_connected(build_from_edges(4, {{0, 1}, {1, 2}, {2, 3}})));
    EXPECT_TRUE(is_connected(build_complete(5)));

    const auto ring = build_constellation(1, 7, 0.5);
    EXPECT_EQ(ring.edges.size(), 7u);
    EXPECT_FALSE(ring.has_intermittent());
    EXPECT_TRUE(is_connected(ring));

    const auto dead = build_constellation(6, 10, 0.0);
    RngStream rng(1, 0);
    EXPECT_EQ(component_count(dead, sample_link_mask(dead, rng, 0.0)), 6);
}

TEST(Graph, GossipMeanPreservedAfterAnyK) {
    const auto g = build_constellation(6, 10, 1.0);
    Matrix x(60, 3);
    RngStream rng(2, 0);
    for (std::size_t k = 0; k < x.size(); ++k) x.data()[k] = rng.normal(0.0, 5.0);
    for (int k : {1, 2, 7, 33}) {
        const auto y = gossip_average(g, x, k);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(y.col_sum(c) / 60.0, x.col_sum(c) / 60.0, 1e-12);
    }
}

TEST(Graph, GossipContractsGeometrically) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto pts = random_points(40, 100 + seed);
        const auto g = build_geometric(pts, radius_for_mean_degree(pts, 8.0));
        if (!is_connected(g)) continue;
        Matrix x(40, 1);
        RngStream rng(seed, 1);
        for (std::size_t i = 0; i < 40; ++i) x(i, 0) = rng.uniform(0.0, 1.0);
        const double m = x.col_sum(0) / 40.0;
        auto dev = [m](const Matrix& y) {
            double d = 0.0;
            for (std::size_t i = 0; i < y.rows(); ++i) d = std::max(d, std::abs(y(i, 0) - m));
            return d;
        };
        const double d10 = dev(gossip_average(g, x, 10));
        const double d20 = dev(gossip_average(g, x, 20));
        const double d40 = dev(gossip_average(g, x, 40));
        EXPECT_LT(d20 / d10, 1.0);
        EXPECT_LT(d40 / d20, 1.0);
    }
}

TEST(Graph, MaskedMixingStaysSymmetricAndStochastic) {
    const auto g = build_constellation(6, 10, 0.5);
    RngStream rng(4, 0);
    const auto mask = sample_link_mask(g, rng, 0.3);
    Matrix eye(60, 60);
    for (std::size_t i = 0; i < 60; ++i) eye(i, i) = 1.0;
    const auto w = gossip_average(g, eye, 1, mask);
    for (std::size_t i = 0; i < 60; ++i) {
        EXPECT_NEAR(w.row_sum(i), 1.0, 1e-12);
        for (std::size_t j = 0; j < 60; ++j) {
            EXPECT_DOUBLE_EQ(w(i, j), w(j, i));
            EXPECT_GE(w(i, j), 0.0);
        }
    }
}
