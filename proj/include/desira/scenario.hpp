#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "desira/domain.hpp"
#include "desira/generative_model.hpp"
#include "desira/graph.hpp"
#include "desira/stats.hpp"

namespace desira {

/// Every knob of the synthetic urban fleet.
struct ScenarioConfig {
    int n_agents = 200;
    int n_stations = 20;
    std::uint64_t seed = 1;

    std::vector<std::string> feature_names{"distance_km", "congestion", "temperature_c"};
    std::vector<FeatureRange> feature_ranges{{5.0, 80.0}, {0.0, 1.0}, {-10.0, 35.0}};
    /// Intercept, then one weight per feature.
    std::vector<double> mean_coeffs{42.0, 0.02, 3.0, 0.05};
    std::vector<double> std_coeffs{1.0, 0.15, 0.0, 0.0};
    double forecast_noise_factor = 0.0;

    FeatureRange endowment{50.0, 100.0};
    /// Capacities are drawn from U(lo * N, hi * N).
    FeatureRange capacity_fraction{0.05, 0.15};
    int history_size = 500;

    double quad_weight = 0.1;
    double price_per_distance = 0.1;
    RiskConfig risk{};

    /// Mean degree the geometric graph radius is tuned for; ignored when radius > 0.
    double target_degree = 8.0;
    double radius = 0.0;
    int max_capacity_retries = 100;

    friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

inline GenerativeModel generative_model(const ScenarioConfig& cfg) {
    GenerativeModel gm;
    gm.feature_names = cfg.feature_names;
    gm.mean_coeffs = cfg.mean_coeffs;
    gm.std_coeffs = cfg.std_coeffs;
    gm.feature_ranges = cfg.feature_ranges;
    gm.forecast_noise_factor = cfg.forecast_noise_factor;
    return gm;
}

inline double sample_true_consumption(const GenerativeModel& gm, std::span<const double> side_info, RngStream& rng) {
    return rng.normal(gm.mean(side_info), gm.sigma(side_info));
}

namespace detail {

// Substream ids so that adding a draw to one stage never shifts another.
enum Stream : std::uint64_t {
    positions = 1,
    stations = 2,
    capacities = 3,
    endowments = 4,
    features = 5,
    history = 6,
    forecast = 7,
};

inline std::vector<double> draw_features(const std::vector<FeatureRange>& ranges, RngStream& rng) {
    std::vector<double> phi(ranges.size());
    for (std::size_t k = 0; k < ranges.size(); ++k) phi[k] = rng.uniform(ranges[k].lo, ranges[k].hi);
    return phi;
}

inline void check_model(const GenerativeModel& gm) {
    const std::size_t d = gm.feature_ranges.size();
    if (gm.mean_coeffs.size() != d + 1 || gm.std_coeffs.size() != d + 1) {
        throw std::invalid_argument("scenario: coefficient vectors must have feature_dim + 1 entries");
    }
    // sigma is affine, so its minimum over the box sits at a corner
    double lowest = gm.std_coeffs[0];
    for (std::size_t k = 0; k < d; ++k) {
        const double w = gm.std_coeffs[k + 1];
        lowest += w * (w >= 0.0 ? gm.feature_ranges[k].lo : gm.feature_ranges[k].hi);
    }
    if (!(lowest > 0.0)) throw std::invalid_argument("scenario: predicted sigma must stay positive over the feature ranges");
}

// Shifts phi along the mean-weight direction so the mean forecast error has std factor * sigma.
inline std::vector<double> corrupt_features(const GenerativeModel& gm, std::span<const double> phi, RngStream& rng) {
    std::vector<double> out(phi.begin(), phi.end());
    if (gm.forecast_noise_factor <= 0.0) return out;
    double norm2 = 0.0;
    for (std::size_t k = 0; k < phi.size(); ++k) norm2 += gm.mean_coeffs[k + 1] * gm.mean_coeffs[k + 1];
    const double shock = gm.forecast_noise_factor * gm.sigma(phi) * rng.normal();
    if (norm2 == 0.0) return out;
    for (std::size_t k = 0; k < phi.size(); ++k) out[k] += shock * gm.mean_coeffs[k + 1] / norm2;
    return out;
}

inline std::vector<HistoryRecord> draw_history(const GenerativeModel& gm, int count, RngStream& rng) {
    std::vector<HistoryRecord> h;
    h.reserve(static_cast<std::size_t>(std::max(count, 0)));
    for (int k = 0; k < count; ++k) {
        HistoryRecord r;
        r.side_info = draw_features(gm.feature_ranges, rng);
        r.consumption = sample_true_consumption(gm, r.side_info, rng);
        h.push_back(std::move(r));
    }
    return h;
}

// Desired allocation: the true quantile deficit, placed at the agent's nearest station; prices scale with distance.
inline void fill_costs(ProblemInstance& inst, double quad_weight, double price_per_distance) {
    const std::size_t n = inst.n_agents();
    const std::size_t s_count = inst.n_stations();
    inst.cost.quad_weight = quad_weight;
    inst.cost.desired = Matrix(n, s_count);
    inst.cost.price = Matrix(n, s_count);
    const double z = inv_norm_cdf(1.0 - inst.risk.epsilon);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& ag = inst.agents[i];
        std::size_t nearest = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < s_count; ++s) {
            const double dist = distance(ag.position, inst.stations[s].position);
            inst.cost.price(i, s) = price_per_distance * dist;
            if (dist < best) {
                best = dist;
                nearest = s;
            }
        }
        const double req = inst.true_model.mean(ag.side_info) + z * inst.true_model.sigma(ag.side_info);
        inst.cost.desired(i, nearest) = std::max(0.0, req - ag.endowment);
    }
}

// Sum over agents of the true lower bound max(0, mu + z sigma - E0).
inline double aggregate_requirement(const ProblemInstance& inst) {
    const double z = inv_norm_cdf(1.0 - inst.risk.epsilon);
    double need = 0.0;
    for (const auto& ag : inst.agents) {
        need += std::max(0.0, inst.true_model.mean(ag.side_info) + z * inst.true_model.sigma(ag.side_info) - ag.endowment);
    }
    return need;
}

inline void draw_capacities(ProblemInstance& inst, FeatureRange fraction, int retries, RngStream& rng) {
    const double n = static_cast<double>(inst.n_agents());
    const double need = aggregate_requirement(inst);
    for (int attempt = 0; attempt <= retries; ++attempt) {
        double total = 0.0;
        for (auto& st : inst.stations) {
            st.capacity = rng.uniform(fraction.lo * n, fraction.hi * n);
            total += st.capacity;
        }
        if (total >= need) return;
    }
    throw std::runtime_error("scenario: aggregate capacity stays below aggregate requirement after retries");
}

}  // namespace detail

/**
 * @brief Urban EV fleet on the unit square.
 *
 * Agents and stations are placed uniformly; features, endowments and
 * capacities are drawn from the configured ranges; a 500-record telemetry
 * history is drawn from the true model for fitting. The communication graph
 * is geometric, with its radius tuned to target_degree unless one is given.
 */
inline ProblemInstance generate_urban(const ScenarioConfig& cfg) {
    if (cfg.n_agents < 1 || cfg.n_stations < 1) throw std::invalid_argument("generate_urban: need at least one agent and one station");
    if (!(cfg.endowment.lo >= 0.0 && cfg.endowment.hi >= cfg.endowment.lo)) {
        throw std::invalid_argument("generate_urban: invalid endowment range");
    }
    if (!(cfg.capacity_fraction.lo >= 0.0 && cfg.capacity_fraction.hi >= cfg.capacity_fraction.lo)) {
        throw std::invalid_argument("generate_urban: invalid capacity range");
    }
    ProblemInstance inst;
    inst.kind = "urban";
    inst.seed = cfg.seed;
    inst.risk = cfg.risk;
    inst.true_model = generative_model(cfg);
    inst.feature_dim = cfg.feature_ranges.size();
    detail::check_model(inst.true_model);

    const auto n = static_cast<std::size_t>(cfg.n_agents);
    const auto s_count = static_cast<std::size_t>(cfg.n_stations);
    RngStream pos_rng(cfg.seed, detail::positions);
    RngStream station_rng(cfg.seed, detail::stations);
    RngStream cap_rng(cfg.seed, detail::capacities);
    RngStream endow_rng(cfg.seed, detail::endowments);
    RngStream feat_rng(cfg.seed, detail::features);
    RngStream hist_rng(cfg.seed, detail::history);
    RngStream noise_rng(cfg.seed, detail::forecast);

    inst.agents.resize(n);
    std::vector<Point> positions(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& ag = inst.agents[i];
        ag.id = static_cast<int>(i);
        ag.position = {pos_rng.uniform(), pos_rng.uniform()};
        positions[i] = ag.position;
        ag.endowment = endow_rng.uniform(cfg.endowment.lo, cfg.endowment.hi);
        ag.side_info = detail::draw_features(cfg.feature_ranges, feat_rng);
        ag.observed_side_info = detail::corrupt_features(inst.true_model, ag.side_info, noise_rng);
    }
    inst.stations.resize(s_count);
    for (std::size_t s = 0; s < s_count; ++s) {
        inst.stations[s].id = static_cast<int>(s);
        inst.stations[s].position = {station_rng.uniform(), station_rng.uniform()};
    }
    detail::draw_capacities(inst, cfg.capacity_fraction, cfg.max_capacity_retries, cap_rng);
    detail::fill_costs(inst, cfg.quad_weight, cfg.price_per_distance);
    inst.history = detail::draw_history(inst.true_model, cfg.history_size, hist_rng);

    const double radius = cfg.radius > 0.0 ? cfg.radius : radius_for_mean_degree(positions, cfg.target_degree);
    inst.graph = build_geometric(positions, radius);
    return inst;
}

inline ProblemInstance generate_urban(int n_agents, int n_stations, std::uint64_t seed) {
    ScenarioConfig cfg;
    cfg.n_agents = n_agents;
    cfg.n_stations = n_stations;
    cfg.seed = seed;
    return generate_urban(cfg);
}

/// Knobs of the satellite scenario.
struct ConstellationConfig {
    int planes = 6;
    int per_plane = 10;
    int n_stations = 4;
    std::uint64_t seed = 1;
    /// Per-iteration up-probability of inter-plane links.
    double interplane_up_prob = 1.0;
    std::vector<std::string> feature_names{"orbit_phase", "eclipse_fraction", "payload_duty"};
    std::vector<FeatureRange> feature_ranges{{0.0, 1.0}, {0.0, 0.4}, {0.0, 1.0}};
    std::vector<double> mean_coeffs{30.0, 2.0, 40.0, 15.0};
    std::vector<double> std_coeffs{1.0, 0.0, 8.0, 4.0};
    double forecast_noise_factor = 0.0;
    FeatureRange endowment{40.0, 80.0};
    FeatureRange capacity_fraction{1.5, 3.0};
    int history_size = 500;
    double quad_weight = 0.1;
    double price_per_distance = 0.1;
    RiskConfig risk{};
    int max_capacity_retries = 100;
};

/**
 * @brief LEO constellation: planes x per_plane satellites sharing S power-budget pools.
 *
 * Satellites sit on a planes x per_plane lattice of the unit square; the
 * pools are placed uniformly. Inter-plane links are intermittent.
 */
inline ProblemInstance generate_constellation(const ConstellationConfig& cfg) {
    if (cfg.planes < 1 || cfg.per_plane < 1 || cfg.n_stations < 1) {
        throw std::invalid_argument("generate_constellation: sizes must be >= 1");
    }
    ProblemInstance inst;
    inst.kind = "constellation";
    inst.seed = cfg.seed;
    inst.risk = cfg.risk;
    inst.true_model.feature_names = cfg.feature_names;
    inst.true_model.feature_ranges = cfg.feature_ranges;
    inst.true_model.mean_coeffs = cfg.mean_coeffs;
    inst.true_model.std_coeffs = cfg.std_coeffs;
    inst.true_model.forecast_noise_factor = cfg.forecast_noise_factor;
    inst.feature_dim = cfg.feature_ranges.size();
    detail::check_model(inst.true_model);

    RngStream station_rng(cfg.seed, detail::stations);
    RngStream cap_rng(cfg.seed, detail::capacities);
    RngStream endow_rng(cfg.seed, detail::endowments);
    RngStream feat_rng(cfg.seed, detail::features);
    RngStream hist_rng(cfg.seed, detail::history);
    RngStream noise_rng(cfg.seed, detail::forecast);

    const int n = cfg.planes * cfg.per_plane;
    inst.agents.resize(static_cast<std::size_t>(n));
    for (int p = 0; p < cfg.planes; ++p) {
        for (int s = 0; s < cfg.per_plane; ++s) {
            auto& ag = inst.agents[static_cast<std::size_t>(p * cfg.per_plane + s)];
            ag.id = p * cfg.per_plane + s;
            ag.position = {(p + 0.5) / cfg.planes, (s + 0.5) / cfg.per_plane};
            ag.endowment = endow_rng.uniform(cfg.endowment.lo, cfg.endowment.hi);
            ag.side_info = detail::draw_features(cfg.feature_ranges, feat_rng);
            // orbit phase follows the slot
            ag.side_info[0] = static_cast<double>(s) / cfg.per_plane;
            ag.observed_side_info = detail::corrupt_features(inst.true_model, ag.side_info, noise_rng);
        }
    }
    inst.stations.resize(static_cast<std::size_t>(cfg.n_stations));
    for (int s = 0; s < cfg.n_stations; ++s) {
        inst.stations[static_cast<std::size_t>(s)].id = s;
        inst.stations[static_cast<std::size_t>(s)].position = {station_rng.uniform(), station_rng.uniform()};
    }
    detail::draw_capacities(inst, cfg.capacity_fraction, cfg.max_capacity_retries, cap_rng);
    detail::fill_costs(inst, cfg.quad_weight, cfg.price_per_distance);
    inst.history = detail::draw_history(inst.true_model, cfg.history_size, hist_rng);
    inst.graph = build_constellation(cfg.planes, cfg.per_plane, cfg.interplane_up_prob);
    return inst;
}

inline ProblemInstance generate_constellation(std::uint64_t seed) {
    ConstellationConfig cfg;
    cfg.seed = seed;
    return generate_constellation(cfg);
}

}  // namespace desira
