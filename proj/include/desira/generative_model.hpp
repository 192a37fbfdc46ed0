#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace desira {

/// Closed interval a feature is drawn from.
struct FeatureRange {
    double lo = 0.0;
    double hi = 1.0;
    friend bool operator==(const FeatureRange&, const FeatureRange&) = default;
};

/**
 * @brief Ground-truth heteroscedastic linear-Gaussian consumption model.
 *
 * X | phi ~ N(mean_coeffs[0] + sum_k mean_coeffs[k+1] phi_k,
 *             (std_coeffs[0] + sum_k std_coeffs[k+1] phi_k)^2).
 * Used to generate training history and to score allocations; solvers never
 * see it except the centralized oracle, which is given full information.
 */
struct GenerativeModel {
    std::vector<std::string> feature_names;
    std::vector<double> mean_coeffs;
    std::vector<double> std_coeffs;
    std::vector<FeatureRange> feature_ranges;
    /// Std of the forecast error injected into the learner's view, in units of the agent's true sigma.
    double forecast_noise_factor = 0.0;

    std::size_t feature_dim() const { return feature_ranges.size(); }

    double mean(std::span<const double> phi) const {
        check(phi);
        double m = mean_coeffs[0];
        for (std::size_t k = 0; k < phi.size(); ++k) m += mean_coeffs[k + 1] * phi[k];
        return m;
    }

    double sigma(std::span<const double> phi) const {
        check(phi);
        double s = std_coeffs[0];
        for (std::size_t k = 0; k < phi.size(); ++k) s += std_coeffs[k + 1] * phi[k];
        return s;
    }

    friend bool operator==(const GenerativeModel&, const GenerativeModel&) = default;

  private:
    void check(std::span<const double> phi) const {
        if (mean_coeffs.size() != phi.size() + 1 || std_coeffs.size() != phi.size() + 1) {
            throw std::invalid_argument("GenerativeModel: side-info dimension mismatch");
        }
    }
};

}  // namespace desira
