#pragma once

#include <cstddef>
#include <vector>

#include "desira/coordinator.hpp"
#include "desira/domain.hpp"
#include "desira/stats.hpp"

namespace fixture {

/// Well-formed instance with one feature, unit capacities and zero costs; tests overwrite what they need.
inline desira::ProblemInstance tiny(std::size_t n, std::size_t s) {
    desira::ProblemInstance inst;
    inst.feature_dim = 1;
    for (std::size_t i = 0; i < n; ++i) {
        desira::Agent a;
        a.id = static_cast<int>(i);
        a.endowment = 10.0;
        a.side_info = {0.5};
        inst.agents.push_back(a);
    }
    for (std::size_t j = 0; j < s; ++j) {
        desira::Station st;
        st.id = static_cast<int>(j);
        st.capacity = 1.0;
        inst.stations.push_back(st);
    }
    inst.cost.desired = desira::Matrix(n, s);
    inst.cost.price = desira::Matrix(n, s);
    inst.cost.quad_weight = 1.0;
    inst.true_model.feature_names = {"x"};
    inst.true_model.mean_coeffs = {10.0, 0.0};
    inst.true_model.std_coeffs = {1.0, 0.0};
    inst.true_model.feature_ranges = {{0.0, 1.0}};
    return inst;
}

struct Coupled {
    desira::ProblemInstance inst;
    desira::RiskInputs risk;
};

/// Random instance whose station capacities bind: total capacity is half the total desired allocation.
inline Coupled coupled(std::size_t n, std::size_t s, std::uint64_t seed, double lambda = 1.0) {
    Coupled c;
    c.inst = tiny(n, s);
    c.inst.seed = seed;
    c.inst.risk.lambda = lambda;
    c.inst.risk.n_scenarios = 20;
    desira::RngStream rng(seed, 99);
    double desired_total = 0.0;
    for (std::size_t k = 0; k < n * s; ++k) {
        const double d = rng.bernoulli(0.4) ? rng.uniform(0.0, 4.0) : 0.0;
        c.inst.cost.desired.data()[k] = d;
        c.inst.cost.price.data()[k] = rng.uniform(0.0, 0.5);
        desired_total += d;
    }
    c.inst.cost.quad_weight = 0.5;
    std::vector<desira::Prediction> pr(n);
    for (std::size_t i = 0; i < n; ++i) {
        c.inst.agents[i].endowment = rng.uniform(5.0, 10.0);
        pr[i] = {rng.uniform(8.0, 14.0), rng.uniform(0.5, 2.0)};
    }
    c.risk = desira::build_risk_inputs(c.inst, pr, 1.2816, seed);
    double need = 0.0;
    for (double l : c.risk.lower_bounds) need += l;
    const double total_cap = std::max(0.5 * desired_total, 1.5 * need);
    for (std::size_t j = 0; j < s; ++j) c.inst.stations[j].capacity = total_cap / static_cast<double>(s);
    return c;
}

}  // namespace fixture
