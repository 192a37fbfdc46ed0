#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "desira/baselines.hpp"
#include "desira/coordinator.hpp"
#include "desira/risk.hpp"
#include "desira/scenario.hpp"
#include "desira/stats.hpp"

namespace desira {

enum class Method { centralized, desira, no_side_info, greedy };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::centralized: return "centralized";
        case Method::desira: return "desira";
        case Method::no_side_info: return "no_side_info";
        case Method::greedy: return "greedy";
    }
    return "unknown";
}

inline bool parse_method(const std::string& s, Method& out) {
    for (Method m : {Method::centralized, Method::desira, Method::no_side_info, Method::greedy}) {
        if (s == method_name(m)) {
            out = m;
            return true;
        }
    }
    return false;
}

struct EvalReport {
    std::string method;
    std::uint64_t seed = 0;
    std::size_t n = 0;
    std::size_t s = 0;
    /// Communication radius used (0 when the method ignores the graph).
    double radius = 0.0;
    /// sum_i J_i relative to the centralized allocation on the same instance.
    double cost_ratio = 1.0;
    double failure = 0.0;
    double overflow = 0.0;
    double gini = 0.0;
    int iters = 0;
    double sec_per_iter = 0.0;
    /// Extra columns that the CSV contract does not carry.
    double resource_cost = 0.0;
    bool converged = true;
    std::string label;
};

/**
 * CVaR_alpha of max(0, X - level) for X ~ N(mu, sigma^2), in closed form.
 * When the alpha-tail lies above level the clamp is inactive and the Gaussian
 * CVaR applies; otherwise the tail mass is split at level.
 */
inline double gaussian_shortfall_cvar(double mu, double sigma, double level, double alpha) {
    const double z_alpha = inv_norm_cdf(1.0 - alpha);
    if (mu + sigma * z_alpha >= level) return mu - level + sigma * norm_pdf(z_alpha) / alpha;
    const double k = (level - mu) / sigma;
    return sigma * (norm_pdf(k) - k * (1.0 - norm_cdf(k))) / alpha;
}

/// sum_i J_i + lambda sum_i CVaR of the shortfall under the true consumption model.
inline double expected_objective(const ProblemInstance& inst, const Matrix& a) {
    double acc = total_cost(inst, a);
    if (inst.risk.lambda == 0.0) return acc;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto& ag = inst.agents[i];
        acc += inst.risk.lambda * gaussian_shortfall_cvar(inst.true_model.mean(ag.side_info),
                                                          inst.true_model.sigma(ag.side_info),
                                                          ag.endowment + a.row_sum(i), inst.risk.alpha);
    }
    return acc;
}

/// Allocation-level metrics; failure uses fresh draws from the true model, agent i on stream (seed, i).
struct Evaluation {
    double failure = 0.0;
    double overflow = 0.0;
    double gini = 0.0;
    double resource_cost = 0.0;
    double expected_objective = 0.0;
};

inline Evaluation evaluate(const ProblemInstance& inst, const Matrix& a, int n_draws, std::uint64_t seed) {
    if (n_draws < 1) throw std::invalid_argument("evaluate: n_draws must be >= 1");
    Evaluation ev;
    const std::size_t n = inst.n_agents();
    std::uint64_t fails = 0;
    std::vector<double> totals(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& ag = inst.agents[i];
        totals[i] = a.row_sum(i);
        const double have = ag.endowment + totals[i];
        const double mu = inst.true_model.mean(ag.side_info);
        const double sigma = inst.true_model.sigma(ag.side_info);
        RngStream rng(seed, i);
        for (int k = 0; k < n_draws; ++k) {
            if (rng.normal(mu, sigma) > have) ++fails;
        }
    }
    ev.failure = n == 0 ? 0.0 : static_cast<double>(fails) / (static_cast<double>(n) * n_draws);
    ev.overflow = detail::relative_overflow(a, inst.capacities());
    ev.gini = gini(totals);
    ev.resource_cost = total_cost(inst, a);
    ev.expected_objective = expected_objective(inst, a);
    return ev;
}

struct HarnessConfig {
    ScenarioConfig scenario;
    AdmmConfig admm;
    /// Projection used by DESIRA in method comparisons; radius sweeps always gossip.
    ProjectionMode desira_mode = ProjectionMode::exact;
    double ridge = 1.0;
    int n_draws = 10000;
    double centralized_tol = 1e-6;
    int centralized_max_iters = 5000;
    /// Off: timing columns are written as 0 so outputs are byte-reproducible.
    bool timing = false;
    unsigned jobs = 1;
    int calibration_rounds = 20;
    double calibration_tolerance = 0.02;
    double calibration_step = 1.1;
    std::size_t calibration_window = 100;
};

namespace detail {

inline std::uint64_t scenario_seed(const ProblemInstance& inst) { return splitmix64(inst.seed ^ 0x5ce7a410ULL); }
inline std::uint64_t eval_seed(const ProblemInstance& inst) { return splitmix64(inst.seed ^ 0xe7a1ULL); }

// Runs cells [0, count) on up to jobs workers; each cell writes only its own slot.
template <class F>
void for_each_cell(std::size_t count, unsigned jobs, F&& cell) {
    if (jobs <= 1 || count < 2) {
        for (std::size_t k = 0; k < count; ++k) cell(k);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    const unsigned workers = std::min<unsigned>(jobs, static_cast<unsigned>(count));
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t k = next++; k < count; k = next++) cell(k);
        });
    }
}

}  // namespace detail

struct MethodOutcome {
    Matrix allocation;
    SolveReport report;
    bool converged = true;
};

inline ConsumptionModel learner_model(const ProblemInstance& inst, const HarnessConfig& cfg) {
    return fit_model(inst.history, cfg.ridge);
}

/// Solves one instance with one method under the harness conventions.
inline MethodOutcome solve_method(const ProblemInstance& inst, Method m, const HarnessConfig& cfg,
                                  ProjectionMode mode) {
    MethodOutcome out;
    const auto sseed = detail::scenario_seed(inst);
    AdmmConfig admm = cfg.admm;
    admm.mode = mode;
    admm.seed = inst.seed;
    const CommGraph* g = inst.graph ? &*inst.graph : nullptr;
    switch (m) {
        case Method::centralized: {
            auto c = centralized_solve(inst, oracle_risk_inputs(inst, sseed), cfg.centralized_tol,
                                       cfg.centralized_max_iters, cfg.admm.rho);
            out.allocation = std::move(c.allocation);
            out.report = std::move(c.report);
            out.converged = out.report.converged;
            break;
        }
        case Method::desira: {
            auto r = run(inst, g, admm, fitted_risk_inputs(inst, learner_model(inst, cfg), sseed));
            out.allocation = std::move(r.state.a);
            out.report = std::move(r.report);
            out.converged = out.report.converged;
            break;
        }
        case Method::no_side_info: {
            auto r = no_side_info_solve(inst, g, admm, sseed);
            out.allocation = std::move(r.state.a);
            out.report = std::move(r.report);
            out.converged = out.report.converged;
            break;
        }
        case Method::greedy: {
            const auto pooled = pooled_risk_inputs(inst, sseed);
            RngStream rng(inst.seed, 0x67726565ULL);
            out.allocation = greedy_fcfs(inst, pooled.lower_bounds, rng);
            break;
        }
    }
    return out;
}

inline EvalReport make_row(const ProblemInstance& inst, Method m, const MethodOutcome& out, double oracle_cost,
                           const HarnessConfig& cfg, double radius) {
    const auto ev = evaluate(inst, out.allocation, cfg.n_draws, detail::eval_seed(inst));
    EvalReport r;
    r.method = method_name(m);
    r.seed = inst.seed;
    r.n = inst.n_agents();
    r.s = inst.n_stations();
    r.radius = radius;
    r.failure = ev.failure;
    r.overflow = ev.overflow;
    r.gini = ev.gini;
    r.resource_cost = ev.resource_cost;
    r.cost_ratio = oracle_cost > 0.0 ? ev.resource_cost / oracle_cost : 1.0;
    r.iters = out.report.iterations;
    r.sec_per_iter = cfg.timing ? out.report.seconds_per_iter() : 0.0;
    r.converged = out.converged;
    return r;
}

/// Rows ordered by method (centralized, desira, no_side_info, greedy), then by seed.
inline std::vector<EvalReport> sweep_methods(const HarnessConfig& cfg, const std::vector<std::uint64_t>& seeds) {
    constexpr Method methods[] = {Method::centralized, Method::desira, Method::no_side_info, Method::greedy};
    std::vector<std::vector<EvalReport>> cells(seeds.size());
    detail::for_each_cell(seeds.size(), cfg.jobs, [&](std::size_t k) {
        auto sc = cfg.scenario;
        sc.seed = seeds[k];
        const auto inst = generate_urban(sc);
        const double radius = inst.graph ? inst.graph->radius : 0.0;
        std::vector<MethodOutcome> outs;
        for (Method m : methods) outs.push_back(solve_method(inst, m, cfg, cfg.desira_mode));
        const double oracle_cost = total_cost(inst, outs[0].allocation);
        for (std::size_t j = 0; j < outs.size(); ++j) {
            const bool uses_graph = methods[j] != Method::centralized && methods[j] != Method::greedy &&
                                    cfg.desira_mode == ProjectionMode::gossip;
            cells[k].push_back(make_row(inst, methods[j], outs[j], oracle_cost, cfg, uses_graph ? radius : 0.0));
        }
    });
    std::vector<EvalReport> rows;
    for (std::size_t j = 0; j < std::size(methods); ++j) {
        for (std::size_t k = 0; k < seeds.size(); ++k) rows.push_back(cells[k][j]);
    }
    return rows;
}

/// Gossip-mode DESIRA at each communication radius; rows ordered by radius, then seed.
inline std::vector<EvalReport> sweep_radius(const HarnessConfig& cfg, const std::vector<double>& radii,
                                            const std::vector<std::uint64_t>& seeds) {
    const std::size_t cells_n = radii.size() * seeds.size();
    std::vector<EvalReport> rows(cells_n);
    detail::for_each_cell(cells_n, cfg.jobs, [&](std::size_t k) {
        auto sc = cfg.scenario;
        sc.radius = radii[k / seeds.size()];
        sc.seed = seeds[k % seeds.size()];
        const auto inst = generate_urban(sc);
        const auto oracle = solve_method(inst, Method::centralized, cfg, ProjectionMode::exact);
        const auto out = solve_method(inst, Method::desira, cfg, ProjectionMode::gossip);
        rows[k] = make_row(inst, Method::desira, out, total_cost(inst, oracle.allocation), cfg, sc.radius);
    });
    return rows;
}

/// Per-iteration and total time of DESIRA and the centralized oracle at each fleet size; the station count stays at cfg.scenario.n_stations.
inline std::vector<EvalReport> sweep_scaling(const HarnessConfig& cfg, const std::vector<int>& sizes,
                                             const std::vector<std::uint64_t>& seeds) {
    std::vector<EvalReport> rows;
    // timing cells run one at a time so workers do not contend for cores
    for (int n : sizes) {
        for (auto seed : seeds) {
            auto sc = cfg.scenario;
            sc.n_agents = n;
            sc.seed = seed;
            const auto inst = generate_urban(sc);
            const auto oracle = solve_method(inst, Method::centralized, cfg, ProjectionMode::exact);
            const auto out = solve_method(inst, Method::desira, cfg, cfg.desira_mode);
            const double oc = total_cost(inst, oracle.allocation);
            auto r_or = make_row(inst, Method::centralized, oracle, oc, cfg, 0.0);
            auto r_de = make_row(inst, Method::desira, out, oc, cfg, 0.0);
            if (!cfg.timing) r_or.sec_per_iter = r_de.sec_per_iter = 0.0;
            rows.push_back(r_or);
            rows.push_back(r_de);
        }
    }
    return rows;
}

struct CalibrationOutcome {
    std::vector<double> inflation;
    std::vector<double> violation_rate;
    Matrix allocation;
    SolveReport report;
};

/**
 * @brief Closed-loop calibration.
 *
 * Each round every agent observes one true consumption at its own side
 * information, adds it to its rolling window, and inflates its buffer by
 * step when the windowed violation rate exceeds epsilon + tolerance. DESIRA
 * is then solved with the inflated per-agent predictions.
 */
inline CalibrationOutcome calibrate_and_solve(const ProblemInstance& inst, const HarnessConfig& cfg,
                                              ProjectionMode mode) {
    const auto model = learner_model(inst, cfg);
    const std::size_t n = inst.n_agents();
    std::vector<CalibrationState> cal(n);
    for (auto& c : cal) c.capacity_k = cfg.calibration_window;
    RngStream obs_rng(inst.seed, 0x63616c69ULL);
    for (int round = 0; round < cfg.calibration_rounds; ++round) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto& ag = inst.agents[i];
            Observation ob;
            ob.consumption = sample_true_consumption(inst.true_model, ag.side_info, obs_rng);
            ob.side_info = ag.observed_side_info.empty() ? ag.side_info : ag.observed_side_info;
            update_and_violation_rate(cal[i], std::move(ob), model, inst.risk.epsilon);
            inflate_if_violated(cal[i], inst.risk.epsilon, cfg.calibration_tolerance, cfg.calibration_step);
        }
    }
    auto pr = model_predictions(inst, model);
    CalibrationOutcome out;
    for (std::size_t i = 0; i < n; ++i) {
        pr[i].sigma *= cal[i].inflation;
        out.inflation.push_back(cal[i].inflation);
        out.violation_rate.push_back(cal[i].last_violation_rate);
    }
    const auto risk = build_risk_inputs(inst, pr, quantile_multiplier(model, inst.risk.epsilon),
                                        detail::scenario_seed(inst));
    AdmmConfig admm = cfg.admm;
    admm.mode = mode;
    admm.seed = inst.seed;
    auto r = run(inst, inst.graph ? &*inst.graph : nullptr, admm, risk);
    out.allocation = std::move(r.state.a);
    out.report = std::move(r.report);
    return out;
}

/// Rows per (noise factor, seed): desira, desira_calibrated, no_side_info; the label column holds the variant.
inline std::vector<EvalReport> sweep_noise(const HarnessConfig& cfg, const std::vector<double>& factors,
                                           const std::vector<std::uint64_t>& seeds) {
    const std::size_t cells_n = factors.size() * seeds.size();
    std::vector<std::vector<EvalReport>> cells(cells_n);
    detail::for_each_cell(cells_n, cfg.jobs, [&](std::size_t k) {
        auto sc = cfg.scenario;
        sc.forecast_noise_factor = factors[k / seeds.size()];
        sc.seed = seeds[k % seeds.size()];
        const auto inst = generate_urban(sc);
        const auto oracle = solve_method(inst, Method::centralized, cfg, ProjectionMode::exact);
        const double oc = total_cost(inst, oracle.allocation);
        auto plain = make_row(inst, Method::desira, solve_method(inst, Method::desira, cfg, cfg.desira_mode), oc, cfg, 0.0);
        plain.label = "desira";
        const auto calibrated = calibrate_and_solve(inst, cfg, cfg.desira_mode);
        MethodOutcome co{calibrated.allocation, calibrated.report, calibrated.report.converged};
        auto cal_row = make_row(inst, Method::desira, co, oc, cfg, 0.0);
        cal_row.label = "desira_calibrated";
        auto nsi = make_row(inst, Method::no_side_info, solve_method(inst, Method::no_side_info, cfg, cfg.desira_mode),
                            oc, cfg, 0.0);
        nsi.label = "no_side_info";
        for (auto* r : {&plain, &cal_row, &nsi}) r->radius = sc.forecast_noise_factor;
        cells[k] = {plain, cal_row, nsi};
    });
    std::vector<EvalReport> rows;
    for (auto& c : cells) rows.insert(rows.end(), c.begin(), c.end());
    return rows;
}

inline constexpr const char* csv_header = "method,seed,N,S,R,cost_ratio,failure,overflow,gini,iters,sec_per_iter";

namespace detail {
inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}
}  // namespace detail

/// Writes the fixed-header CSV; the method column carries the row label when one is set.
inline void write_csv(std::ostream& os, const std::vector<EvalReport>& rows) {
    os << csv_header << '\n';
    for (const auto& r : rows) {
        os << (r.label.empty() ? r.method : r.label) << ',' << r.seed << ',' << r.n << ',' << r.s << ','
           << detail::fmt(r.radius) << ',' << detail::fmt(r.cost_ratio) << ',' << detail::fmt(r.failure) << ','
           << detail::fmt(r.overflow) << ',' << detail::fmt(r.gini) << ',' << r.iters << ','
           << detail::fmt(r.sec_per_iter) << '\n';
    }
}

struct Stat {
    double mean = 0.0;
    double std = 0.0;
};

struct SummaryRow {
    std::string group;
    /// Sweep parameter shared by the group (radius, size or noise factor); 0 for method comparisons.
    double param = 0.0;
    std::size_t count = 0;
    Stat cost_ratio, failure, overflow, gini, iters, sec_per_iter;
};

/// Mean and sample std per (label or method, R column, N), in first-appearance order.
inline std::vector<SummaryRow> summarize(const std::vector<EvalReport>& rows, bool group_by_n = false) {
    std::vector<SummaryRow> out;
    std::vector<std::vector<const EvalReport*>> members;
    for (const auto& r : rows) {
        const std::string g = r.label.empty() ? r.method : r.label;
        const double param = group_by_n ? static_cast<double>(r.n) : r.radius;
        std::size_t k = 0;
        while (k < out.size() && !(out[k].group == g && out[k].param == param)) ++k;
        if (k == out.size()) {
            SummaryRow row;
            row.group = g;
            row.param = param;
            out.push_back(row);
            members.emplace_back();
        }
        members[k].push_back(&r);
    }
    auto stat = [](const std::vector<const EvalReport*>& ms, auto field) {
        std::vector<double> v;
        for (const auto* m : ms) v.push_back(field(*m));
        return Stat{mean(v), v.size() > 1 ? stddev(v) : 0.0};
    };
    for (std::size_t k = 0; k < out.size(); ++k) {
        const auto& ms = members[k];
        out[k].count = ms.size();
        out[k].cost_ratio = stat(ms, [](const EvalReport& r) { return r.cost_ratio; });
        out[k].failure = stat(ms, [](const EvalReport& r) { return r.failure; });
        out[k].overflow = stat(ms, [](const EvalReport& r) { return r.overflow; });
        out[k].gini = stat(ms, [](const EvalReport& r) { return r.gini; });
        out[k].iters = stat(ms, [](const EvalReport& r) { return static_cast<double>(r.iters); });
        out[k].sec_per_iter = stat(ms, [](const EvalReport& r) { return r.sec_per_iter; });
    }
    return out;
}

/// Least-squares R^2 of y against x.
inline double linear_r2(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("linear_r2: need matching samples");
    const double mx = mean(x);
    const double my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sxy += (x[k] - mx) * (y[k] - my);
        sxx += (x[k] - mx) * (x[k] - mx);
        syy += (y[k] - my) * (y[k] - my);
    }
    if (syy == 0.0) return 1.0;
    if (sxx == 0.0) return 0.0;
    return sxy * sxy / (sxx * syy);
}

}  // namespace desira
