#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "desira/domain.hpp"
#include "desira/graph.hpp"
#include "desira/local_solver.hpp"
#include "desira/risk.hpp"

namespace desira {

enum class ProjectionMode { exact, gossip };

struct AdmmConfig {
    double rho = 1.0;
    int max_iters = 100;
    double tol_primal = 1e-3;
    double tol_dual = 1e-3;
    ProjectionMode mode = ProjectionMode::exact;
    /// Mixing rounds per iteration in gossip mode.
    int gossip_rounds = 10;
    /// Extra per-iteration drop probability on intermittent links.
    double dropout_prob = 0.0;
    /// Seeds the link-state stream.
    std::uint64_t seed = 0;
    /// Golden-section tolerance on each agent's total allocation.
    double local_tol = 1e-8;
    /// Worker threads for the a-update phase; results do not depend on this.
    unsigned threads = 1;
};

/// Per-agent inputs derived from whichever consumption model a method uses.
struct RiskInputs {
    std::vector<double> requirement;
    std::vector<double> lower_bounds;
    std::vector<std::vector<double>> scenarios;
};

/// r_i = mu_i + multiplier * sigma_i, L_i = max(0, r_i - E0_i), M Gaussian scenarios per agent on stream (seed, i).
inline RiskInputs build_risk_inputs(const ProblemInstance& inst, std::span<const Prediction> predictions,
                                    double multiplier, std::uint64_t scenario_seed) {
    if (predictions.size() != inst.agents.size()) throw std::invalid_argument("build_risk_inputs: one prediction per agent");
    RiskInputs r;
    const std::size_t n = inst.agents.size();
    r.requirement.resize(n);
    r.lower_bounds.resize(n);
    r.scenarios.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& pr = predictions[i];
        r.requirement[i] = pr.mu + multiplier * pr.sigma;
        r.lower_bounds[i] = allocation_lower_bound(r.requirement[i], inst.agents[i].endowment);
        RngStream rng(scenario_seed, i);
        r.scenarios[i].resize(static_cast<std::size_t>(inst.risk.n_scenarios));
        for (auto& x : r.scenarios[i]) x = rng.normal(pr.mu, pr.sigma);
    }
    return r;
}

struct ResidualRow {
    int iter = 0;
    double primal = 0.0;
    double dual = 0.0;
    double overflow = 0.0;
};

struct PhaseTimes {
    double a_update = 0.0;
    double z_update = 0.0;
    double dual_update = 0.0;
    double total = 0.0;
};

struct SolveReport {
    int iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    bool converged = false;
    /// max_s max(0, sum_i a_is - c_s) at exit.
    double overflow = 0.0;
    /// sum_s max(0, sum_i a_is - c_s) / sum_s c_s at exit.
    double relative_overflow = 0.0;
    PhaseTimes seconds;
    std::vector<ResidualRow> series;
    std::vector<std::string> warnings;

    double seconds_per_iter() const { return iterations > 0 ? seconds.total / iterations : 0.0; }
};

struct RunResult {
    AllocationState state;
    SolveReport report;
};

class DivergenceError : public std::runtime_error {
  public:
    DivergenceError(const std::string& what, int iteration, int agent)
        : std::runtime_error(what), iteration_(iteration), agent_(agent) {}
    int iteration() const { return iteration_; }
    int agent() const { return agent_; }

  private:
    int iteration_;
    int agent_;
};

struct Residuals {
    double primal = 0.0;
    double dual = 0.0;
    double overflow = 0.0;
};

/**
 * primal = ||a - z||_F / sqrt(NS), dual = rho ||z - z_prev||_F / sqrt(NS),
 * overflow = max_s max(0, sum_i a_is - c_s).
 */
inline Residuals residuals(const AllocationState& st, double rho, std::span<const double> capacities) {
    Residuals r;
    const double scale = std::sqrt(static_cast<double>(std::max<std::size_t>(st.a.size(), 1)));
    r.primal = frobenius_distance(st.a, st.z) / scale;
    r.dual = st.z_prev.same_shape(st.z) ? rho * frobenius_distance(st.z, st.z_prev) / scale : 0.0;
    const auto over = station_overflow(st.a, capacities);
    r.overflow = over.empty() ? 0.0 : *std::max_element(over.begin(), over.end());
    return r;
}

/**
 * @brief What an interrupted run can promise.
 *
 * The allocation is the current primal iterate, which satisfies a >= 0 and
 * every per-agent lower bound by construction of the a-update. In exact mode
 * sum_i z_is <= c_s, so each station's overflow is bounded by
 * sum_i |a_is - z_is| <= sqrt(N) ||a - z||_F, reported as overflow_bound.
 */
struct Snapshot {
    Matrix allocation;
    std::vector<double> station_overflow;
    double max_overflow = 0.0;
    double primal_residual = 0.0;
    double overflow_bound = 0.0;
    bool lower_bounds_hold = true;
    std::vector<int> violating_agents;
};

inline Snapshot anytime_snapshot(const AllocationState& st, const ProblemInstance& inst, const RiskInputs& risk) {
    Snapshot snap;
    snap.allocation = st.a;
    const auto caps = inst.capacities();
    snap.station_overflow = station_overflow(st.a, caps);
    snap.max_overflow = snap.station_overflow.empty()
                            ? 0.0
                            : *std::max_element(snap.station_overflow.begin(), snap.station_overflow.end());
    const double dist = frobenius_distance(st.a, st.z);
    snap.primal_residual = dist / std::sqrt(static_cast<double>(std::max<std::size_t>(st.a.size(), 1)));
    snap.overflow_bound = std::sqrt(static_cast<double>(st.a.rows())) * dist;
    for (std::size_t i = 0; i < st.a.rows(); ++i) {
        bool ok = st.a.row_sum(i) >= risk.lower_bounds[i];
        for (double v : st.a.row(i)) ok = ok && v >= 0.0;
        if (!ok) {
            snap.lower_bounds_hold = false;
            snap.violating_agents.push_back(static_cast<int>(i));
        }
    }
    return snap;
}

using IterationObserver = std::function<void(const AllocationState&)>;

namespace detail {

inline double relative_overflow(const Matrix& a, std::span<const double> caps) {
    const auto over = station_overflow(a, caps);
    double num = 0.0;
    double den = 0.0;
    for (std::size_t s = 0; s < caps.size(); ++s) {
        num += over[s];
        den += caps[s];
    }
    if (den <= 0.0) return num > 0.0 ? 1.0 : 0.0;
    return std::min(1.0, num / den);
}

template <class F>
void parallel_rows(std::size_t n, unsigned threads, F&& body) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const unsigned workers = std::min<unsigned>(threads, static_cast<unsigned>(n));
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) body(i);
        });
    }
}

}  // namespace detail

/**
 * @brief Consensus-ADMM over agents and stations.
 *
 * Each iteration: every agent solves its a-update against anchor z_i - u_i;
 * z is formed from a + u either by the exact per-station capped-simplex
 * projection or, in gossip mode, by proportional scaling against a
 * gossip-estimated mean station load; then u += a - z. Stops when both
 * residuals fall below their tolerances or after max_iters.
 */
inline RunResult run(const ProblemInstance& inst, const CommGraph* graph, const AdmmConfig& cfg, const RiskInputs& risk,
                     const IterationObserver& observer = {}) {
    using clock = std::chrono::steady_clock;
    if (!(cfg.rho > 0.0)) throw std::invalid_argument("run: rho must be positive");
    if (cfg.tol_primal < 0.0 || cfg.tol_dual < 0.0) throw std::invalid_argument("run: tolerances must be >= 0");
    const std::size_t n = inst.n_agents();
    const std::size_t s_count = inst.n_stations();
    if (risk.lower_bounds.size() != n || risk.scenarios.size() != n) {
        throw std::invalid_argument("run: risk inputs must cover every agent");
    }
    if (inst.cost.desired.rows() != n || inst.cost.desired.cols() != s_count) {
        throw std::invalid_argument("run: cost matrices must be N x S");
    }

    RunResult out;
    auto& st = out.state;
    auto& rep = out.report;
    st.a = Matrix(n, s_count);
    st.z = Matrix(n, s_count);
    st.u = Matrix(n, s_count);
    st.z_prev = Matrix(n, s_count);

    if (cfg.mode == ProjectionMode::gossip) {
        if (graph == nullptr) throw std::invalid_argument("run: gossip mode needs a communication graph");
        if (graph->n != n) throw std::invalid_argument("run: graph size differs from agent count");
        if (!is_connected(*graph)) rep.warnings.emplace_back("communication graph is not connected");
        if (cfg.gossip_rounds < 1) throw std::invalid_argument("run: gossip_rounds must be >= 1");
    }

    const auto caps = inst.capacities();
    const bool risk_term = inst.risk.lambda > 0.0;
    std::vector<ShortfallTail> tails(n);
    if (risk_term) {
        for (std::size_t i = 0; i < n; ++i) {
            tails[i] = ShortfallTail(risk.scenarios[i], inst.agents[i].endowment, inst.risk.alpha);
        }
    }
    RngStream link_rng(cfg.seed, 0x6c696e6bULL);
    const double scale = std::sqrt(static_cast<double>(std::max<std::size_t>(n * s_count, 1)));
    constexpr double divergence_limit = 1e6;

    auto seconds_since = [](clock::time_point t0) {
        return std::chrono::duration<double>(clock::now() - t0).count();
    };
    const auto t_start = clock::now();

    for (int t = 1; t <= cfg.max_iters; ++t) {
        auto t0 = clock::now();
        std::vector<int> bad(n, 0);
        detail::parallel_rows(n, cfg.threads, [&](std::size_t i) {
            std::vector<double> anchor(s_count);
            for (std::size_t s = 0; s < s_count; ++s) anchor[s] = st.z(i, s) - st.u(i, s);
            LocalSubproblem sub;
            sub.agent = i;
            sub.desired = inst.cost.desired.row(i);
            sub.price = inst.cost.price.row(i);
            sub.quad_weight = inst.cost.quad_weight;
            sub.rho = cfg.rho;
            sub.anchor = anchor;
            sub.lower_bound = risk.lower_bounds[i];
            sub.scenarios = risk.scenarios[i];
            sub.lambda = inst.risk.lambda;
            sub.alpha = inst.risk.alpha;
            sub.endowment = inst.agents[i].endowment;
            sub.tail = risk_term ? &tails[i] : nullptr;
            const auto ai = solve_a_update(sub, cfg.local_tol);
            auto row = st.a.row(i);
            for (std::size_t s = 0; s < s_count; ++s) {
                row[s] = ai[s];
                if (!std::isfinite(ai[s])) bad[i] = 1;
            }
        });
        for (std::size_t i = 0; i < n; ++i) {
            if (bad[i]) {
                throw DivergenceError("run: non-finite allocation at iteration " + std::to_string(t) + ", agent " +
                                          std::to_string(i),
                                      t, static_cast<int>(i));
            }
        }
        rep.seconds.a_update += seconds_since(t0);

        t0 = clock::now();
        st.z_prev = st.z;
        if (cfg.mode == ProjectionMode::exact) {
            std::vector<double> col(n);
            for (std::size_t s = 0; s < s_count; ++s) {
                for (std::size_t i = 0; i < n; ++i) col[i] = st.a(i, s) + st.u(i, s);
                const auto proj = project_capped_simplex(col, caps[s]);
                for (std::size_t i = 0; i < n; ++i) st.z(i, s) = proj[i];
            }
        } else {
            Matrix load(n, s_count);
            for (std::size_t k = 0; k < load.size(); ++k) {
                load.data()[k] = std::max(0.0, st.a.data()[k] + st.u.data()[k]);
            }
            std::vector<bool> mask;
            if (graph->has_intermittent()) mask = sample_link_mask(*graph, link_rng, cfg.dropout_prob);
            const Matrix est = gossip_average(*graph, load, cfg.gossip_rounds, mask);
            const double fleet = static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t s = 0; s < s_count; ++s) {
                    const double est_total = fleet * est(i, s);
                    const double factor = est_total > caps[s] ? caps[s] / est_total : 1.0;
                    st.z(i, s) = load(i, s) * factor;
                }
            }
        }
        rep.seconds.z_update += seconds_since(t0);

        t0 = clock::now();
        for (std::size_t k = 0; k < st.u.size(); ++k) st.u.data()[k] += st.a.data()[k] - st.z.data()[k];
        rep.seconds.dual_update += seconds_since(t0);

        st.iter = t;
        const double primal = frobenius_distance(st.a, st.z) / scale;
        const double dual = cfg.rho * frobenius_distance(st.z, st.z_prev) / scale;
        st.primal_residual_history.push_back(primal);
        st.dual_residual_history.push_back(dual);
        const auto over = station_overflow(st.a, caps);
        const double max_over = over.empty() ? 0.0 : *std::max_element(over.begin(), over.end());
        rep.series.push_back({t, primal, dual, max_over});
        rep.iterations = t;
        rep.primal_residual = primal;
        rep.dual_residual = dual;

        if (observer) observer(st);

        if (!std::isfinite(primal) || !std::isfinite(dual) || primal > divergence_limit || dual > divergence_limit) {
            throw DivergenceError("run: residuals diverged at iteration " + std::to_string(t), t, -1);
        }
        if (primal < cfg.tol_primal && dual < cfg.tol_dual) {
            rep.converged = true;
            break;
        }
    }
    rep.seconds.total = seconds_since(t_start);
    const auto over = station_overflow(st.a, caps);
    rep.overflow = over.empty() ? 0.0 : *std::max_element(over.begin(), over.end());
    rep.relative_overflow = detail::relative_overflow(st.a, caps);
    return out;
}

}  // namespace desira
