#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "desira/stats.hpp"

namespace desira {

namespace detail {

// Threshold tau with sum_j max(u_j - tau, 0) = total for u sorted descending, total > 0.
inline double simplex_threshold(std::span<const double> sorted_desc, double total) {
    double prefix = 0.0;
    double tau = 0.0;
    for (std::size_t j = 0; j < sorted_desc.size(); ++j) {
        prefix += sorted_desc[j];
        const double cand = (prefix - total) / static_cast<double>(j + 1);
        if (sorted_desc[j] - cand > 0.0) tau = cand;
    }
    return tau;
}

// Nudges entries so that the left-to-right sum is at least target, repairing rounding in the last ulps.
inline void enforce_min_sum(std::vector<double>& y, double target) {
    if (y.empty()) return;
    const auto big = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
    for (int guard = 0; guard < 64; ++guard) {
        const double sum = std::accumulate(y.begin(), y.end(), 0.0);
        if (sum >= target) return;
        const double gap = target - sum;
        y[big] = std::nextafter(y[big] + gap, std::numeric_limits<double>::infinity());
    }
}

}  // namespace detail

/**
 * @brief Euclidean projection onto {y >= 0, sum(y) <= cap}.
 *
 * If the positive part of v already fits it is returned; otherwise the
 * sort-based threshold gives y = max(v - tau, 0) with sum(y) = cap.
 */
inline std::vector<double> project_capped_simplex(std::span<const double> v, double cap) {
    if (cap < 0.0) throw std::invalid_argument("project_capped_simplex: cap must be >= 0");
    std::vector<double> y(v.size());
    double pos_sum = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
        y[j] = std::max(v[j], 0.0);
        pos_sum += y[j];
    }
    if (pos_sum <= cap) return y;
    if (cap == 0.0) {
        std::fill(y.begin(), y.end(), 0.0);
        return y;
    }
    std::vector<double> u(v.begin(), v.end());
    std::sort(u.begin(), u.end(), std::greater<>());
    const double tau = detail::simplex_threshold(u, cap);
    for (std::size_t j = 0; j < v.size(); ++j) y[j] = std::max(v[j] - tau, 0.0);
    return y;
}

/// Euclidean projection onto {y >= 0, sum(y) = total}, total >= 0.
inline std::vector<double> project_simplex_sum(std::span<const double> c, double total) {
    if (total < 0.0) throw std::invalid_argument("project_simplex_sum: total must be >= 0");
    std::vector<double> y(c.size(), 0.0);
    if (total == 0.0 || c.empty()) return y;
    std::vector<double> u(c.begin(), c.end());
    std::sort(u.begin(), u.end(), std::greater<>());
    const double tau = detail::simplex_threshold(u, total);
    for (std::size_t j = 0; j < c.size(); ++j) y[j] = std::max(c[j] - tau, 0.0);
    return y;
}

/**
 * @brief CVaR of the clamped shortfall max(0, xi - E0 - t) as a function of t.
 *
 * Scenario order does not depend on t, so the top floor(M alpha) + 1
 * scenarios are sorted once and each evaluation costs O(M alpha).
 */
class ShortfallTail {
  public:
    ShortfallTail() = default;
    ShortfallTail(std::span<const double> scenarios, double endowment, double alpha)
        : endowment_(endowment), mass_(static_cast<double>(scenarios.size()) * alpha) {
        if (scenarios.empty()) throw std::invalid_argument("ShortfallTail: no scenarios");
        if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("ShortfallTail: alpha must lie in (0, 1)");
        full_ = static_cast<std::size_t>(std::floor(mass_));
        frac_ = mass_ - static_cast<double>(full_);
        const std::size_t keep = std::min(scenarios.size(), full_ + 1);
        top_.assign(scenarios.begin(), scenarios.end());
        std::partial_sort(top_.begin(), top_.begin() + static_cast<std::ptrdiff_t>(keep), top_.end(), std::greater<>());
        top_.resize(keep);
        if (full_ >= top_.size()) frac_ = 0.0;
    }

    double operator()(double t) const {
        if (top_.empty()) return 0.0;
        double acc = 0.0;
        const double shift = endowment_ + t;
        for (std::size_t j = 0; j < full_ && j < top_.size(); ++j) acc += std::max(0.0, top_[j] - shift);
        if (frac_ > 0.0) acc += frac_ * std::max(0.0, top_[full_] - shift);
        return acc / mass_;
    }

    /// Total allocation beyond which every shortfall is zero.
    double zero_shortfall_level() const { return top_.empty() ? 0.0 : std::max(0.0, top_.front() - endowment_); }

    bool empty() const { return top_.empty(); }

  private:
    double endowment_ = 0.0;
    double mass_ = 1.0;
    std::size_t full_ = 0;
    double frac_ = 0.0;
    std::vector<double> top_;
};

/**
 * Agent i's a-update:
 *   min_a (w/2)||a - d||^2 + p^T a + lambda CVaR_alpha[max(0, xi - E0 - 1^T a)] + (rho/2)||a - anchor||^2
 *   s.t. a >= 0, 1^T a >= lower_bound,
 * where anchor = z_i - u_i.
 */
struct LocalSubproblem {
    std::size_t agent = 0;
    std::span<const double> desired;
    std::span<const double> price;
    double quad_weight = 1.0;
    double rho = 1.0;
    std::span<const double> anchor;
    double lower_bound = 0.0;
    std::span<const double> scenarios;
    double lambda = 0.0;
    double alpha = 0.1;
    double endowment = 0.0;
    /// Optional prebuilt tail for the scenarios above; built on the fly when null.
    const ShortfallTail* tail = nullptr;
};

/// f_i(a) = J_i(a) + lambda CVaR_alpha[shortfall], evaluated directly from the scenario list.
inline double local_objective(const LocalSubproblem& sub, std::span<const double> a) {
    double cost = 0.0;
    double total = 0.0;
    for (std::size_t s = 0; s < a.size(); ++s) {
        const double dev = a[s] - sub.desired[s];
        cost += 0.5 * sub.quad_weight * dev * dev + sub.price[s] * a[s];
        total += a[s];
    }
    if (sub.lambda == 0.0 || sub.scenarios.empty()) return cost;
    std::vector<double> shortfall(sub.scenarios.size());
    for (std::size_t m = 0; m < shortfall.size(); ++m) {
        shortfall[m] = std::max(0.0, sub.scenarios[m] - sub.endowment - total);
    }
    return cost + sub.lambda * cvar_empirical(shortfall, sub.alpha);
}

/// f_i(a) + (rho/2)||a - anchor||^2, the quantity solve_a_update minimizes.
inline double proximal_objective(const LocalSubproblem& sub, std::span<const double> a) {
    double prox = 0.0;
    for (std::size_t s = 0; s < a.size(); ++s) {
        const double dev = a[s] - sub.anchor[s];
        prox += dev * dev;
    }
    return local_objective(sub, a) + 0.5 * sub.rho * prox;
}

/**
 * @brief Exact a-update by reduction to a one-dimensional search over t = 1^T a.
 *
 * The two quadratics merge into ((w + rho)/2)||a - c||^2 with
 * c = (w d - p + rho anchor) / (w + rho). For fixed t the best a is the
 * projection of c onto {a >= 0, 1^T a = t}; the resulting value function
 * plus lambda CVaR(t) is convex in t and is minimized by golden-section
 * search on [L, t_max] to tolerance t_tol.
 */
inline std::vector<double> solve_a_update(const LocalSubproblem& sub, double t_tol = 1e-8) {
    if (!(t_tol > 0.0)) throw std::invalid_argument("solve_a_update: tolerance must be positive");
    if (!(sub.rho > 0.0)) throw std::invalid_argument("solve_a_update: rho must be positive");
    if (sub.lower_bound < 0.0) throw std::invalid_argument("solve_a_update: lower bound must be >= 0");
    const std::size_t dim = sub.anchor.size();
    if (sub.desired.size() != dim || sub.price.size() != dim) {
        throw std::invalid_argument("solve_a_update: dimension mismatch");
    }

    const double curvature = sub.quad_weight + sub.rho;
    std::vector<double> center(dim);
    double abs_sum = 0.0;
    for (std::size_t s = 0; s < dim; ++s) {
        center[s] = (sub.quad_weight * sub.desired[s] - sub.price[s] + sub.rho * sub.anchor[s]) / curvature;
        abs_sum += std::abs(center[s]);
    }

    ShortfallTail local_tail;
    const ShortfallTail* tail = sub.tail;
    const bool risk_term = sub.lambda > 0.0 && !sub.scenarios.empty();
    if (risk_term && tail == nullptr) {
        local_tail = ShortfallTail(sub.scenarios, sub.endowment, sub.alpha);
        tail = &local_tail;
    }

    auto value = [&](double t) {
        const auto y = project_simplex_sum(center, t);
        double q = 0.0;
        for (std::size_t s = 0; s < dim; ++s) q += (y[s] - center[s]) * (y[s] - center[s]);
        double v = 0.5 * curvature * q;
        if (risk_term) v += sub.lambda * (*tail)(t);
        return v;
    };

    const double lo0 = sub.lower_bound;
    const double hi0 = sub.lower_bound + abs_sum + (risk_term ? tail->zero_shortfall_level() : 0.0);
    if (hi0 < lo0) throw std::runtime_error("solve_a_update: infeasible lower bound");

    double t_best = lo0;
    if (hi0 > lo0) {
        constexpr double inv_phi = 0.6180339887498949;
        double lo = lo0;
        double hi = hi0;
        double x1 = hi - inv_phi * (hi - lo);
        double x2 = lo + inv_phi * (hi - lo);
        double f1 = value(x1);
        double f2 = value(x2);
        while (hi - lo > t_tol) {
            if (f1 <= f2) {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = value(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = value(x2);
            }
        }
        const double mid = 0.5 * (lo + hi);
        t_best = mid;
        double f_best = value(mid);
        // the minimum often sits exactly on an end of the bracket
        for (double cand : {lo0, hi0}) {
            const double fc = value(cand);
            if (fc <= f_best) {
                f_best = fc;
                t_best = cand;
            }
        }
    }

    auto a = project_simplex_sum(center, t_best);
    detail::enforce_min_sum(a, sub.lower_bound);
    return a;
}

}  // namespace desira
