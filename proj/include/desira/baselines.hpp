#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "desira/coordinator.hpp"
#include "desira/domain.hpp"
#include "desira/local_solver.hpp"
#include "desira/risk.hpp"
#include "desira/stats.hpp"

namespace desira {

/// Predictions from the ground-truth model at the true side information.
inline std::vector<Prediction> true_predictions(const ProblemInstance& inst) {
    std::vector<Prediction> out;
    out.reserve(inst.n_agents());
    for (const auto& a : inst.agents) {
        out.push_back({inst.true_model.mean(a.side_info), inst.true_model.sigma(a.side_info)});
    }
    return out;
}

/// Predictions from a fitted model at the side information the learner observes.
inline std::vector<Prediction> model_predictions(const ProblemInstance& inst, const ConsumptionModel& model) {
    std::vector<Prediction> out;
    out.reserve(inst.n_agents());
    for (const auto& a : inst.agents) {
        out.push_back(predict(model, a.observed_side_info.empty() ? a.side_info : a.observed_side_info));
    }
    return out;
}

/// Gaussian multiplier for the instance's epsilon, or the calibrated one in conformal mode.
inline double quantile_multiplier(const ConsumptionModel& model, double epsilon) {
    return model.quantile_mode == QuantileMode::conformal ? model.conformal_multiplier : inv_norm_cdf(1.0 - epsilon);
}

inline RiskInputs oracle_risk_inputs(const ProblemInstance& inst, std::uint64_t scenario_seed) {
    const auto pr = true_predictions(inst);
    return build_risk_inputs(inst, pr, inv_norm_cdf(1.0 - inst.risk.epsilon), scenario_seed);
}

inline RiskInputs fitted_risk_inputs(const ProblemInstance& inst, const ConsumptionModel& model,
                                     std::uint64_t scenario_seed, double inflation = 1.0) {
    const auto pr = model_predictions(inst, model);
    return build_risk_inputs(inst, pr, quantile_multiplier(model, inst.risk.epsilon) * inflation, scenario_seed);
}

inline RiskInputs pooled_risk_inputs(const ProblemInstance& inst, std::uint64_t scenario_seed) {
    return fitted_risk_inputs(inst, pooled_model(inst.history), scenario_seed);
}

/// sum_i J_i(a_i) + lambda sum_i CVaR_alpha of agent i's scenario shortfalls.
inline double objective(const ProblemInstance& inst, const Matrix& a, const RiskInputs& risk) {
    double acc = total_cost(inst, a);
    if (inst.risk.lambda == 0.0) return acc;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto& xi = risk.scenarios[i];
        if (xi.empty()) continue;
        const double t = a.row_sum(i);
        std::vector<double> shortfall(xi.size());
        for (std::size_t m = 0; m < xi.size(); ++m) shortfall[m] = std::max(0.0, xi[m] - inst.agents[i].endowment - t);
        acc += inst.risk.lambda * cvar_empirical(shortfall, inst.risk.alpha);
    }
    return acc;
}

struct CentralizedResult {
    Matrix allocation;
    double objective = 0.0;
    SolveReport report;
    /// Largest coordinate change of a fresh a-update at the returned (z, u).
    double kkt_gap = 0.0;
    bool certified = false;
};

/**
 * @brief Reference solution of the coupled problem.
 *
 * Exact-projection ADMM run to a tight tolerance. The result is certified
 * when re-solving every agent's a-update at the final (z, u) moves no
 * coordinate by more than 1e-4.
 */
inline CentralizedResult centralized_solve(const ProblemInstance& inst, const RiskInputs& risk, double tol = 1e-6,
                                           int max_iters = 5000, double rho = 1.0) {
    AdmmConfig cfg;
    cfg.rho = rho;
    cfg.max_iters = max_iters;
    cfg.tol_primal = tol;
    cfg.tol_dual = tol;
    cfg.mode = ProjectionMode::exact;
    cfg.local_tol = 1e-11;
    auto run_out = run(inst, nullptr, cfg, risk);

    CentralizedResult res;
    res.report = std::move(run_out.report);
    const auto& st = run_out.state;
    const std::size_t s_count = inst.n_stations();
    for (std::size_t i = 0; i < inst.n_agents(); ++i) {
        std::vector<double> anchor(s_count);
        for (std::size_t s = 0; s < s_count; ++s) anchor[s] = st.z(i, s) - st.u(i, s);
        LocalSubproblem sub;
        sub.agent = i;
        sub.desired = inst.cost.desired.row(i);
        sub.price = inst.cost.price.row(i);
        sub.quad_weight = inst.cost.quad_weight;
        sub.rho = rho;
        sub.anchor = anchor;
        sub.lower_bound = risk.lower_bounds[i];
        sub.scenarios = risk.scenarios[i];
        sub.lambda = inst.risk.lambda;
        sub.alpha = inst.risk.alpha;
        sub.endowment = inst.agents[i].endowment;
        const auto again = solve_a_update(sub, 1e-11);
        for (std::size_t s = 0; s < s_count; ++s) res.kkt_gap = std::max(res.kkt_gap, std::abs(again[s] - st.a(i, s)));
    }
    res.certified = res.kkt_gap <= 1e-4;
    res.allocation = st.a;
    res.objective = objective(inst, res.allocation, risk);
    return res;
}

/**
 * @brief First-come-first-served allocation.
 *
 * Agents are taken in a seeded random order; each visits stations by
 * increasing price and takes min(remaining need, remaining capacity).
 * Never exceeds a capacity.
 */
inline Matrix greedy_fcfs(const ProblemInstance& inst, std::span<const double> needs, RngStream& rng) {
    const std::size_t n = inst.n_agents();
    const std::size_t s_count = inst.n_stations();
    if (needs.size() != n) throw std::invalid_argument("greedy_fcfs: one need per agent");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    auto remaining = inst.capacities();
    Matrix a(n, s_count);
    std::vector<std::size_t> stations(s_count);
    for (std::size_t i : order) {
        std::iota(stations.begin(), stations.end(), 0);
        const auto price = inst.cost.price.row(i);
        std::stable_sort(stations.begin(), stations.end(),
                         [&](std::size_t x, std::size_t y) { return price[x] < price[y]; });
        double need = needs[i];
        for (std::size_t s : stations) {
            if (need <= 0.0) break;
            const double take = std::min(need, remaining[s]);
            if (take <= 0.0) continue;
            a(i, s) = take;
            remaining[s] -= take;
            need -= take;
        }
    }
    return a;
}

/// Consensus ADMM with every agent's prediction replaced by the fleet-pooled mean and standard deviation.
inline RunResult no_side_info_solve(const ProblemInstance& inst, const CommGraph* graph, const AdmmConfig& cfg,
                                    std::uint64_t scenario_seed) {
    return run(inst, graph, cfg, pooled_risk_inputs(inst, scenario_seed));
}

}  // namespace desira
