#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "desira/generative_model.hpp"
#include "desira/graph.hpp"
#include "desira/matrix.hpp"

namespace desira {

struct Agent {
    int id = 0;
    /// Initial endowment E0 (kWh).
    double endowment = 0.0;
    /// True side information phi (distance km, congestion, temperature C for urban fleets).
    std::vector<double> side_info;
    /// Side information as seen by the learner; equals side_info unless forecast noise is injected.
    std::vector<double> observed_side_info;
    Point position;
    friend bool operator==(const Agent&, const Agent&) = default;
};

struct Station {
    int id = 0;
    double capacity = 0.0;
    Point position;
    friend bool operator==(const Station&, const Station&) = default;
};

/// J_i(a) = (w/2) ||a_i - d_i||^2 + p_i^T a_i.
struct CostModel {
    Matrix desired;
    Matrix price;
    double quad_weight = 1.0;
    friend bool operator==(const CostModel&, const CostModel&) = default;
};

struct RiskConfig {
    double epsilon = 0.05;
    double lambda = 1.0;
    double alpha = 0.1;
    int n_scenarios = 100;
    friend bool operator==(const RiskConfig&, const RiskConfig&) = default;
};

/// One (phi, X) pair of fleet telemetry.
struct HistoryRecord {
    std::vector<double> side_info;
    double consumption = 0.0;
    friend bool operator==(const HistoryRecord&, const HistoryRecord&) = default;
};

struct ProblemInstance {
    std::string kind = "custom";
    std::uint64_t seed = 0;
    std::size_t feature_dim = 0;
    std::vector<Agent> agents;
    std::vector<Station> stations;
    CostModel cost;
    RiskConfig risk;
    GenerativeModel true_model;
    std::vector<HistoryRecord> history;
    std::optional<CommGraph> graph;

    std::size_t n_agents() const { return agents.size(); }
    std::size_t n_stations() const { return stations.size(); }

    std::vector<double> capacities() const {
        std::vector<double> c;
        c.reserve(stations.size());
        for (const auto& s : stations) c.push_back(s.capacity);
        return c;
    }
};

/**
 * Scaled-form ADMM iterate. z_prev is the consensus matrix from the previous
 * iteration, kept so the dual residual can be recomputed from the state.
 */
struct AllocationState {
    Matrix a;
    Matrix z;
    Matrix u;
    Matrix z_prev;
    int iter = 0;
    std::vector<double> primal_residual_history;
    std::vector<double> dual_residual_history;
};

struct ValidationIssue {
    std::string location;
    std::string field;
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const { return issues.empty(); }
};

namespace detail {
inline bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }
}  // namespace detail

/// Lists every violated invariant; never throws.
inline ValidationReport validate(const ProblemInstance& inst) {
    ValidationReport rep;
    auto add = [&rep](std::string loc, std::string field, std::string msg) {
        rep.issues.push_back({std::move(loc), std::move(field), std::move(msg)});
    };
    const std::size_t n = inst.agents.size();
    const std::size_t s = inst.stations.size();
    if (n < 1) add("instance", "agents", "at least one agent required");
    if (s < 1) add("instance", "stations", "at least one station required");

    for (std::size_t i = 0; i < n; ++i) {
        const auto& a = inst.agents[i];
        const std::string loc = "agents[" + std::to_string(i) + "]";
        if (a.id != static_cast<int>(i)) add(loc, "id", "id must equal its index");
        if (!detail::finite_nonneg(a.endowment)) add(loc, "endowment", "must be finite and >= 0");
        if (a.side_info.size() != inst.feature_dim) add(loc, "side_info", "length differs from feature_dim");
        if (!a.observed_side_info.empty() && a.observed_side_info.size() != inst.feature_dim) {
            add(loc, "observed_side_info", "length differs from feature_dim");
        }
        for (double v : a.side_info) {
            if (!std::isfinite(v)) add(loc, "side_info", "non-finite entry");
        }
    }
    for (std::size_t j = 0; j < s; ++j) {
        const auto& st = inst.stations[j];
        const std::string loc = "stations[" + std::to_string(j) + "]";
        if (st.id != static_cast<int>(j)) add(loc, "id", "id must equal its index");
        if (!detail::finite_nonneg(st.capacity)) add(loc, "capacity", "must be finite and >= 0");
    }

    auto check_matrix = [&](const Matrix& m, const char* name) {
        if (m.rows() != n || m.cols() != s) {
            add("cost", name, "must be N x S");
            return;
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < s; ++j) {
                if (!detail::finite_nonneg(m(i, j))) {
                    add("cost." + std::string(name) + "[" + std::to_string(i) + "][" + std::to_string(j) + "]", name,
                        "must be finite and >= 0");
                }
            }
        }
    };
    check_matrix(inst.cost.desired, "desired");
    check_matrix(inst.cost.price, "price");
    if (!(std::isfinite(inst.cost.quad_weight) && inst.cost.quad_weight > 0.0)) {
        add("cost", "quad_weight", "must be finite and > 0");
    }

    const auto& r = inst.risk;
    if (!(r.epsilon > 0.0 && r.epsilon <= 0.5)) add("risk", "epsilon", "must lie in (0, 0.5]");
    if (!detail::finite_nonneg(r.lambda)) add("risk", "lambda", "must be finite and >= 0");
    if (!(r.alpha > 0.0 && r.alpha < 1.0)) add("risk", "alpha", "must lie in (0, 1)");
    if (r.n_scenarios < 1) add("risk", "n_scenarios", "must be >= 1");

    const auto& gm = inst.true_model;
    if (gm.mean_coeffs.size() != inst.feature_dim + 1) add("true_model", "mean_coeffs", "length must be feature_dim + 1");
    if (gm.std_coeffs.size() != inst.feature_dim + 1) add("true_model", "std_coeffs", "length must be feature_dim + 1");
    if (gm.feature_ranges.size() != inst.feature_dim) add("true_model", "feature_ranges", "length must equal feature_dim");

    for (std::size_t k = 0; k < inst.history.size(); ++k) {
        if (inst.history[k].side_info.size() != inst.feature_dim) {
            add("history[" + std::to_string(k) + "]", "side_info", "length differs from feature_dim");
        }
    }
    if (inst.graph && inst.graph->n != n) add("graph", "n", "node count differs from agent count");
    return rep;
}

/// J_i for one agent row.
inline double agent_cost(const CostModel& cost, std::size_t i, std::span<const double> a) {
    if (a.size() != cost.desired.cols()) throw std::invalid_argument("agent_cost: dimension mismatch");
    double acc = 0.0;
    const auto d = cost.desired.row(i);
    const auto p = cost.price.row(i);
    for (std::size_t s = 0; s < a.size(); ++s) {
        const double dev = a[s] - d[s];
        acc += 0.5 * cost.quad_weight * dev * dev + p[s] * a[s];
    }
    return acc;
}

/// sum_i J_i(a_i).
inline double total_cost(const CostModel& cost, const Matrix& a) {
    if (!a.same_shape(cost.desired) || !a.same_shape(cost.price)) {
        throw std::invalid_argument("total_cost: allocation must be N x S");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) acc += agent_cost(cost, i, a.row(i));
    return acc;
}

inline double total_cost(const ProblemInstance& inst, const Matrix& a) { return total_cost(inst.cost, a); }

/// Per-station load minus capacity, clamped at zero.
inline std::vector<double> station_overflow(const Matrix& a, std::span<const double> capacities) {
    if (a.cols() != capacities.size()) throw std::invalid_argument("station_overflow: dimension mismatch");
    std::vector<double> out(capacities.size());
    for (std::size_t s = 0; s < capacities.size(); ++s) out[s] = std::max(0.0, a.col_sum(s) - capacities[s]);
    return out;
}

}  // namespace desira
