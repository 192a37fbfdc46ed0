#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "desira/coordinator.hpp"
#include "desira/domain.hpp"
#include "desira/harness.hpp"
#include "desira/risk.hpp"
#include "desira/scenario.hpp"

namespace desira {

using json = nlohmann::json;

/// Malformed or unreadable input; the CLI maps it to exit code 2.
class InputError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto r = m.row(i);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    return rows;
}

inline Matrix matrix_from_json(const json& j, std::size_t rows, std::size_t cols, const char* what) {
    if (!j.is_array() || j.size() != rows) throw InputError(std::string(what) + ": expected " + std::to_string(rows) + " rows");
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (!j[i].is_array() || j[i].size() != cols) {
            throw InputError(std::string(what) + "[" + std::to_string(i) + "]: expected " + std::to_string(cols) + " columns");
        }
        for (std::size_t s = 0; s < cols; ++s) m(i, s) = j[i][s].get<double>();
    }
    return m;
}

// JSON has no infinity; non-finite reals travel as null.
inline json real(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
inline double real_or_inf(const json& j) { return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>(); }

inline json point(const Point& p) { return json::array({p.x, p.y}); }
inline Point point_from(const json& j) {
    if (!j.is_array() || j.size() != 2) throw InputError("position: expected [x, y]");
    return {j[0].get<double>(), j[1].get<double>()};
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline json to_json(const GenerativeModel& gm) {
    json ranges = json::array();
    for (const auto& r : gm.feature_ranges) ranges.push_back({r.lo, r.hi});
    return {{"feature_names", gm.feature_names},
            {"mean_coeffs", gm.mean_coeffs},
            {"std_coeffs", gm.std_coeffs},
            {"feature_ranges", ranges},
            {"forecast_noise_factor", gm.forecast_noise_factor}};
}

inline GenerativeModel generative_model_from_json(const json& j) {
    GenerativeModel gm;
    detail::read_opt(j, "feature_names", gm.feature_names);
    gm.mean_coeffs = j.at("mean_coeffs").get<std::vector<double>>();
    gm.std_coeffs = j.at("std_coeffs").get<std::vector<double>>();
    for (const auto& r : j.at("feature_ranges")) gm.feature_ranges.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    detail::read_opt(j, "forecast_noise_factor", gm.forecast_noise_factor);
    return gm;
}

inline json to_json(const CommGraph& g) {
    json edges = json::array();
    for (const auto& e : g.edges) {
        edges.push_back({{"u", e.u}, {"v", e.v}, {"intermittent", e.intermittent}, {"up_prob", e.up_prob}});
    }
    return {{"n", g.n}, {"radius", detail::real(g.radius)}, {"edges", edges}};
}

inline CommGraph graph_from_json(const json& j) {
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) {
        Edge x;
        x.u = e.at("u").get<int>();
        x.v = e.at("v").get<int>();
        detail::read_opt(e, "intermittent", x.intermittent);
        detail::read_opt(e, "up_prob", x.up_prob);
        edges.push_back(x);
    }
    const double radius = j.contains("radius") ? detail::real_or_inf(j.at("radius")) : 0.0;
    try {
        return build_from_edges(j.at("n").get<std::size_t>(), std::move(edges), radius);
    } catch (const std::logic_error& e) {
        throw InputError(std::string("graph: ") + e.what());
    }
}

inline json to_json(const RiskConfig& r) {
    return {{"epsilon", r.epsilon}, {"lambda", r.lambda}, {"alpha", r.alpha}, {"n_scenarios", r.n_scenarios}};
}

inline RiskConfig risk_from_json(const json& j) {
    RiskConfig r;
    detail::read_opt(j, "epsilon", r.epsilon);
    detail::read_opt(j, "lambda", r.lambda);
    detail::read_opt(j, "alpha", r.alpha);
    detail::read_opt(j, "n_scenarios", r.n_scenarios);
    return r;
}

/**
 * Instance schema. Required: agents, stations, cost, risk, meta.seed.
 * Optional: true_model, history, graph. Matrices are row-major nested arrays.
 */
inline json to_json(const ProblemInstance& inst) {
    json agents = json::array();
    for (const auto& a : inst.agents) {
        agents.push_back({{"id", a.id},
                          {"endowment", a.endowment},
                          {"side_info", a.side_info},
                          {"observed_side_info", a.observed_side_info},
                          {"position", detail::point(a.position)}});
    }
    json stations = json::array();
    for (const auto& s : inst.stations) {
        stations.push_back({{"id", s.id}, {"capacity", s.capacity}, {"position", detail::point(s.position)}});
    }
    json history = json::array();
    for (const auto& h : inst.history) history.push_back({{"side_info", h.side_info}, {"consumption", h.consumption}});
    json j = {{"meta", {{"seed", inst.seed}, {"kind", inst.kind}, {"feature_dim", inst.feature_dim}}},
              {"agents", agents},
              {"stations", stations},
              {"cost",
               {{"desired", detail::matrix_to_json(inst.cost.desired)},
                {"price", detail::matrix_to_json(inst.cost.price)},
                {"quad_weight", inst.cost.quad_weight}}},
              {"risk", to_json(inst.risk)},
              {"true_model", to_json(inst.true_model)},
              {"history", history}};
    if (inst.graph) j["graph"] = to_json(*inst.graph);
    return j;
}

inline ProblemInstance instance_from_json(const json& j) {
    try {
        ProblemInstance inst;
        const auto& meta = j.at("meta");
        inst.seed = meta.at("seed").get<std::uint64_t>();
        detail::read_opt(meta, "kind", inst.kind);
        for (const auto& a : j.at("agents")) {
            Agent ag;
            ag.id = a.at("id").get<int>();
            ag.endowment = a.at("endowment").get<double>();
            ag.side_info = a.at("side_info").get<std::vector<double>>();
            detail::read_opt(a, "observed_side_info", ag.observed_side_info);
            if (a.contains("position")) ag.position = detail::point_from(a.at("position"));
            inst.agents.push_back(std::move(ag));
        }
        for (const auto& s : j.at("stations")) {
            Station st;
            st.id = s.at("id").get<int>();
            st.capacity = s.at("capacity").get<double>();
            if (s.contains("position")) st.position = detail::point_from(s.at("position"));
            inst.stations.push_back(st);
        }
        inst.feature_dim = inst.agents.empty() ? 0 : inst.agents.front().side_info.size();
        detail::read_opt(meta, "feature_dim", inst.feature_dim);
        const auto& cost = j.at("cost");
        inst.cost.desired = detail::matrix_from_json(cost.at("desired"), inst.agents.size(), inst.stations.size(), "cost.desired");
        inst.cost.price = detail::matrix_from_json(cost.at("price"), inst.agents.size(), inst.stations.size(), "cost.price");
        detail::read_opt(cost, "quad_weight", inst.cost.quad_weight);
        inst.risk = risk_from_json(j.at("risk"));
        if (j.contains("true_model")) inst.true_model = generative_model_from_json(j.at("true_model"));
        if (j.contains("history")) {
            for (const auto& h : j.at("history")) {
                inst.history.push_back({h.at("side_info").get<std::vector<double>>(), h.at("consumption").get<double>()});
            }
        }
        if (j.contains("graph")) inst.graph = graph_from_json(j.at("graph"));
        return inst;
    } catch (const json::exception& e) {
        throw InputError(std::string("instance: ") + e.what());
    }
}

inline json to_json(const ConsumptionModel& m) {
    return {{"mean_coeffs", m.mean_coeffs},
            {"std_coeffs", m.std_coeffs},
            {"sigma_floor", m.sigma_floor},
            {"quantile_mode", m.quantile_mode == QuantileMode::conformal ? "conformal" : "gaussian"},
            {"conformal_multiplier", detail::real(m.conformal_multiplier)}};
}

inline ConsumptionModel model_from_json(const json& j) {
    try {
        ConsumptionModel m;
        m.mean_coeffs = j.at("mean_coeffs").get<std::vector<double>>();
        m.std_coeffs = j.at("std_coeffs").get<std::vector<double>>();
        detail::read_opt(j, "sigma_floor", m.sigma_floor);
        if (j.contains("quantile_mode")) {
            const auto mode = j.at("quantile_mode").get<std::string>();
            if (mode == "conformal") {
                m.quantile_mode = QuantileMode::conformal;
            } else if (mode != "gaussian") {
                throw InputError("model: unknown quantile_mode " + mode);
            }
        }
        if (j.contains("conformal_multiplier")) m.conformal_multiplier = detail::real_or_inf(j.at("conformal_multiplier"));
        return m;
    } catch (const json::exception& e) {
        throw InputError(std::string("model: ") + e.what());
    }
}

inline json allocation_to_json(const Matrix& a) {
    return {{"N", a.rows()}, {"S", a.cols()}, {"allocation", detail::matrix_to_json(a)}};
}

inline Matrix allocation_from_json(const json& j) {
    try {
        return detail::matrix_from_json(j.at("allocation"), j.at("N").get<std::size_t>(), j.at("S").get<std::size_t>(),
                                        "allocation");
    } catch (const json::exception& e) {
        throw InputError(std::string("allocation: ") + e.what());
    }
}

/// Phase times are included only when timing is on, so default reports are reproducible.
inline json to_json(const SolveReport& r, bool timing) {
    json j = {{"iterations", r.iterations},
              {"primal_residual", r.primal_residual},
              {"dual_residual", r.dual_residual},
              {"converged", r.converged},
              {"overflow", r.overflow},
              {"relative_overflow", r.relative_overflow},
              {"warnings", r.warnings}};
    j["seconds"] = {{"a_update", timing ? r.seconds.a_update : 0.0},
                    {"z_update", timing ? r.seconds.z_update : 0.0},
                    {"dual_update", timing ? r.seconds.dual_update : 0.0},
                    {"total", timing ? r.seconds.total : 0.0}};
    return j;
}

inline void write_residual_csv(std::ostream& os, const SolveReport& r) {
    os << "iter,primal,dual,overflow\n";
    for (const auto& row : r.series) {
        os << row.iter << ',' << detail::fmt(row.primal) << ',' << detail::fmt(row.dual) << ','
           << detail::fmt(row.overflow) << '\n';
    }
}

inline json to_json(const ScenarioConfig& c) {
    json ranges = json::array();
    for (const auto& r : c.feature_ranges) ranges.push_back({r.lo, r.hi});
    return {{"n_agents", c.n_agents},
            {"n_stations", c.n_stations},
            {"seed", c.seed},
            {"feature_names", c.feature_names},
            {"feature_ranges", ranges},
            {"mean_coeffs", c.mean_coeffs},
            {"std_coeffs", c.std_coeffs},
            {"forecast_noise_factor", c.forecast_noise_factor},
            {"endowment", {c.endowment.lo, c.endowment.hi}},
            {"capacity_fraction", {c.capacity_fraction.lo, c.capacity_fraction.hi}},
            {"history_size", c.history_size},
            {"quad_weight", c.quad_weight},
            {"price_per_distance", c.price_per_distance},
            {"risk", to_json(c.risk)},
            {"target_degree", c.target_degree},
            {"radius", c.radius},
            {"max_capacity_retries", c.max_capacity_retries}};
}

/// Keys absent from j keep the values already in base.
inline ScenarioConfig scenario_config_from_json(const json& j, ScenarioConfig base = {}) {
    try {
        auto range = [](const json& r) { return FeatureRange{r.at(0).get<double>(), r.at(1).get<double>()}; };
        detail::read_opt(j, "n_agents", base.n_agents);
        detail::read_opt(j, "n_stations", base.n_stations);
        detail::read_opt(j, "seed", base.seed);
        detail::read_opt(j, "feature_names", base.feature_names);
        if (j.contains("feature_ranges")) {
            base.feature_ranges.clear();
            for (const auto& r : j.at("feature_ranges")) base.feature_ranges.push_back(range(r));
        }
        detail::read_opt(j, "mean_coeffs", base.mean_coeffs);
        detail::read_opt(j, "std_coeffs", base.std_coeffs);
        detail::read_opt(j, "forecast_noise_factor", base.forecast_noise_factor);
        if (j.contains("endowment")) base.endowment = range(j.at("endowment"));
        if (j.contains("capacity_fraction")) base.capacity_fraction = range(j.at("capacity_fraction"));
        detail::read_opt(j, "history_size", base.history_size);
        detail::read_opt(j, "quad_weight", base.quad_weight);
        detail::read_opt(j, "price_per_distance", base.price_per_distance);
        if (j.contains("risk")) {
            const auto& r = j.at("risk");
            detail::read_opt(r, "epsilon", base.risk.epsilon);
            detail::read_opt(r, "lambda", base.risk.lambda);
            detail::read_opt(r, "alpha", base.risk.alpha);
            detail::read_opt(r, "n_scenarios", base.risk.n_scenarios);
        }
        detail::read_opt(j, "target_degree", base.target_degree);
        detail::read_opt(j, "radius", base.radius);
        detail::read_opt(j, "max_capacity_retries", base.max_capacity_retries);
        return base;
    } catch (const json::exception& e) {
        throw InputError(std::string("scenario config: ") + e.what());
    }
}

inline const char* mode_name(ProjectionMode m) { return m == ProjectionMode::gossip ? "gossip" : "exact"; }

inline ProjectionMode mode_from_string(const std::string& s) {
    if (s == "exact") return ProjectionMode::exact;
    if (s == "gossip") return ProjectionMode::gossip;
    throw InputError("unknown projection mode " + s);
}

inline json to_json(const AdmmConfig& c) {
    return {{"rho", c.rho},
            {"max_iters", c.max_iters},
            {"tol_primal", c.tol_primal},
            {"tol_dual", c.tol_dual},
            {"mode", mode_name(c.mode)},
            {"gossip_rounds", c.gossip_rounds},
            {"dropout_prob", c.dropout_prob},
            {"local_tol", c.local_tol}};
}

inline AdmmConfig admm_config_from_json(const json& j, AdmmConfig base = {}) {
    try {
        detail::read_opt(j, "rho", base.rho);
        detail::read_opt(j, "max_iters", base.max_iters);
        detail::read_opt(j, "tol_primal", base.tol_primal);
        detail::read_opt(j, "tol_dual", base.tol_dual);
        if (j.contains("mode")) base.mode = mode_from_string(j.at("mode").get<std::string>());
        detail::read_opt(j, "gossip_rounds", base.gossip_rounds);
        detail::read_opt(j, "dropout_prob", base.dropout_prob);
        detail::read_opt(j, "local_tol", base.local_tol);
        return base;
    } catch (const json::exception& e) {
        throw InputError(std::string("admm config: ") + e.what());
    }
}

/**
 * Sweep configuration file: {"scenario": {...}, "admm": {...}, "desira_mode",
 * "ridge", "n_draws", "centralized_tol", "centralized_max_iters",
 * "calibration_rounds", "calibration_tolerance", "calibration_step",
 * "calibration_window"}. Every key is optional.
 */
inline json to_json(const HarnessConfig& c) {
    return {{"scenario", to_json(c.scenario)},
            {"admm", to_json(c.admm)},
            {"desira_mode", mode_name(c.desira_mode)},
            {"ridge", c.ridge},
            {"n_draws", c.n_draws},
            {"centralized_tol", c.centralized_tol},
            {"centralized_max_iters", c.centralized_max_iters},
            {"calibration_rounds", c.calibration_rounds},
            {"calibration_tolerance", c.calibration_tolerance},
            {"calibration_step", c.calibration_step},
            {"calibration_window", c.calibration_window}};
}

inline HarnessConfig harness_config_from_json(const json& j, HarnessConfig base = {}) {
    try {
        if (j.contains("scenario")) base.scenario = scenario_config_from_json(j.at("scenario"), base.scenario);
        if (j.contains("admm")) base.admm = admm_config_from_json(j.at("admm"), base.admm);
        if (j.contains("desira_mode")) base.desira_mode = mode_from_string(j.at("desira_mode").get<std::string>());
        detail::read_opt(j, "ridge", base.ridge);
        detail::read_opt(j, "n_draws", base.n_draws);
        detail::read_opt(j, "centralized_tol", base.centralized_tol);
        detail::read_opt(j, "centralized_max_iters", base.centralized_max_iters);
        detail::read_opt(j, "calibration_rounds", base.calibration_rounds);
        detail::read_opt(j, "calibration_tolerance", base.calibration_tolerance);
        detail::read_opt(j, "calibration_step", base.calibration_step);
        detail::read_opt(j, "calibration_window", base.calibration_window);
        return base;
    } catch (const json::exception& e) {
        throw InputError(std::string("config: ") + e.what());
    }
}

inline json to_json(const Stat& s) { return {{"mean", s.mean}, {"std", s.std}}; }

inline json summary_to_json(const std::vector<SummaryRow>& rows, const char* param_name) {
    json out = json::array();
    for (const auto& r : rows) {
        out.push_back({{"group", r.group},
                       {param_name, r.param},
                       {"count", r.count},
                       {"cost_ratio", to_json(r.cost_ratio)},
                       {"failure", to_json(r.failure)},
                       {"overflow", to_json(r.overflow)},
                       {"gini", to_json(r.gini)},
                       {"iters", to_json(r.iters)},
                       {"sec_per_iter", to_json(r.sec_per_iter)}});
    }
    return out;
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError(path + ": " + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

inline void write_json_file(const std::string& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

}  // namespace desira
