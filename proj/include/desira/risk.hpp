#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "desira/domain.hpp"
#include "desira/stats.hpp"

namespace desira {

enum class QuantileMode { gaussian, conformal };

/**
 * @brief Heteroscedastic linear-Gaussian predictor mu(phi), sigma(phi).
 *
 * Coefficient vectors hold an intercept followed by one weight per feature.
 * In conformal mode the Gaussian quantile is replaced by conformal_multiplier,
 * which is specific to the epsilon it was calibrated for.
 */
struct ConsumptionModel {
    std::vector<double> mean_coeffs;
    std::vector<double> std_coeffs;
    double sigma_floor = 1e-3;
    QuantileMode quantile_mode = QuantileMode::gaussian;
    double conformal_multiplier = std::numeric_limits<double>::infinity();

    std::size_t feature_dim() const { return mean_coeffs.empty() ? 0 : mean_coeffs.size() - 1; }

    friend bool operator==(const ConsumptionModel&, const ConsumptionModel&) = default;
};

struct Prediction {
    double mu = 0.0;
    double sigma = 0.0;
};

/// Thrown when the unpenalized normal equations are singular.
class RankDeficientError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline Prediction predict(const ConsumptionModel& model, std::span<const double> phi) {
    if (model.mean_coeffs.size() != phi.size() + 1 || model.std_coeffs.size() != phi.size() + 1) {
        throw std::invalid_argument("predict: side-info dimension mismatch");
    }
    double mu = model.mean_coeffs[0];
    double sd = model.std_coeffs[0];
    for (std::size_t k = 0; k < phi.size(); ++k) {
        mu += model.mean_coeffs[k + 1] * phi[k];
        sd += model.std_coeffs[k + 1] * phi[k];
    }
    return {mu, std::max(sd, model.sigma_floor)};
}

namespace detail {

// Ridge with an unpenalized intercept: (X^T X + penalty * diag(0, 1, ..., 1)) b = X^T y.
inline std::vector<double> ridge_solve(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double penalty) {
    const Eigen::Index p = x.cols();
    Eigen::MatrixXd gram = x.transpose() * x;
    for (Eigen::Index k = 1; k < p; ++k) gram(k, k) += penalty;
    const Eigen::VectorXd rhs = x.transpose() * y;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(gram);
    qr.setThreshold(1e-12);
    if (qr.rank() < p) {
        throw RankDeficientError("fit_model: design is rank deficient; raise the ridge penalty");
    }
    const Eigen::VectorXd b = qr.solve(rhs);
    return {b.data(), b.data() + p};
}

}  // namespace detail

/**
 * @brief Ridge fit of mean and standard-deviation regressions.
 *
 * The mean is ordinary ridge least squares. Sigma is a second ridge
 * regression of sqrt(pi/2) |residual| on the same features, using the
 * half-normal identity E|Z| = sigma sqrt(2/pi). Intercepts are unpenalized.
 */
inline ConsumptionModel fit_model(std::span<const HistoryRecord> history, double ridge_penalty, double sigma_floor = 1e-3) {
    if (history.empty()) throw std::invalid_argument("fit_model: empty history");
    if (ridge_penalty < 0.0) throw std::invalid_argument("fit_model: ridge_penalty must be >= 0");
    const std::size_t d = history.front().side_info.size();
    if (history.size() < d + 2) throw std::invalid_argument("fit_model: need at least d + 2 samples");

    const auto n = static_cast<Eigen::Index>(history.size());
    Eigen::MatrixXd x(n, static_cast<Eigen::Index>(d + 1));
    Eigen::VectorXd y(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto& rec = history[static_cast<std::size_t>(r)];
        if (rec.side_info.size() != d) throw std::invalid_argument("fit_model: inconsistent side-info dimension");
        x(r, 0) = 1.0;
        for (std::size_t k = 0; k < d; ++k) x(r, static_cast<Eigen::Index>(k + 1)) = rec.side_info[k];
        y(r) = rec.consumption;
    }

    ConsumptionModel m;
    m.sigma_floor = sigma_floor;
    m.mean_coeffs = detail::ridge_solve(x, y, ridge_penalty);

    const Eigen::Map<const Eigen::VectorXd> beta(m.mean_coeffs.data(), static_cast<Eigen::Index>(d + 1));
    const Eigen::VectorXd resid = y - x * beta;
    const Eigen::VectorXd target = resid.cwiseAbs() * std::sqrt(std::numbers::pi / 2.0);
    m.std_coeffs = detail::ridge_solve(x, target, ridge_penalty);
    return m;
}

/// Fleet-pooled model: constant mean and standard deviation, zero feature weights.
inline ConsumptionModel pooled_model(std::span<const HistoryRecord> history, double sigma_floor = 1e-3) {
    if (history.empty()) throw std::invalid_argument("pooled_model: empty history");
    const std::size_t d = history.front().side_info.size();
    std::vector<double> xs;
    xs.reserve(history.size());
    for (const auto& r : history) xs.push_back(r.consumption);
    ConsumptionModel m;
    m.sigma_floor = sigma_floor;
    m.mean_coeffs.assign(d + 1, 0.0);
    m.std_coeffs.assign(d + 1, 0.0);
    m.mean_coeffs[0] = mean(xs);
    m.std_coeffs[0] = stddev(xs);
    return m;
}

/// r = mu + z * inflation * sigma with z = Phi^{-1}(1 - epsilon).
inline double risk_requirement(double mu, double sigma, double epsilon, double inflation = 1.0) {
    if (!(epsilon > 0.0 && epsilon <= 0.5)) throw std::domain_error("risk_requirement: epsilon must lie in (0, 0.5]");
    return mu + inv_norm_cdf(1.0 - epsilon) * inflation * sigma;
}

/// Model-based requirement; in conformal mode the model's calibrated multiplier replaces the Gaussian quantile.
inline double risk_requirement(const ConsumptionModel& model, std::span<const double> phi, double epsilon,
                               double inflation = 1.0) {
    if (!(epsilon > 0.0 && epsilon <= 0.5)) throw std::domain_error("risk_requirement: epsilon must lie in (0, 0.5]");
    const auto pr = predict(model, phi);
    const double q = model.quantile_mode == QuantileMode::conformal ? model.conformal_multiplier
                                                                     : inv_norm_cdf(1.0 - epsilon);
    return pr.mu + q * inflation * pr.sigma;
}

/// Extra allocation needed on top of the endowment: max(0, r - E0).
inline double allocation_lower_bound(double requirement, double endowment) { return std::max(0.0, requirement - endowment); }

inline std::vector<double> sample_scenarios(const ConsumptionModel& model, std::span<const double> phi, int m,
                                            RngStream& rng) {
    if (m < 1) throw std::invalid_argument("sample_scenarios: m must be >= 1");
    const auto pr = predict(model, phi);
    std::vector<double> out(static_cast<std::size_t>(m));
    for (auto& v : out) v = rng.normal(pr.mu, pr.sigma);
    return out;
}

struct Observation {
    double consumption = 0.0;
    std::vector<double> side_info;
};

/// Rolling window of one agent's telemetry plus its current risk-buffer inflation.
struct CalibrationState {
    std::size_t capacity_k = 100;
    std::deque<Observation> window;
    QuantileMode quantile_mode = QuantileMode::gaussian;
    double inflation = 1.0;
    /// Report a violation rate of 1 (instead of 0) while the window is empty.
    bool conservative_when_empty = false;
    double last_violation_rate = 0.0;
};

/// Fraction of window entries whose consumption exceeded the current requirement at that entry's side info.
inline double violation_rate(const CalibrationState& cal, const ConsumptionModel& model, double epsilon) {
    if (cal.window.empty()) return cal.conservative_when_empty ? 1.0 : 0.0;
    std::size_t hits = 0;
    for (const auto& obs : cal.window) {
        if (obs.consumption > risk_requirement(model, obs.side_info, epsilon, cal.inflation)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(cal.window.size());
}

inline double update_and_violation_rate(CalibrationState& cal, Observation obs, const ConsumptionModel& model,
                                        double epsilon) {
    cal.window.push_back(std::move(obs));
    while (cal.window.size() > cal.capacity_k) cal.window.pop_front();
    cal.last_violation_rate = violation_rate(cal, model, epsilon);
    return cal.last_violation_rate;
}

/// Multiplies the inflation by step when the last violation rate exceeds epsilon + tolerance.
inline double inflate_if_violated(CalibrationState& cal, double epsilon, double tolerance, double step) {
    if (!(step > 1.0)) throw std::invalid_argument("inflate_if_violated: step must be > 1");
    if (cal.last_violation_rate > epsilon + tolerance) cal.inflation *= step;
    cal.inflation = std::max(cal.inflation, 1.0);
    return cal.inflation;
}

/// Standardized residuals (X - mu(phi)) / sigma(phi) on held-out records.
inline std::vector<double> conformal_scores(const ConsumptionModel& model, std::span<const HistoryRecord> validation) {
    std::vector<double> s;
    s.reserve(validation.size());
    for (const auto& r : validation) {
        const auto pr = predict(model, r.side_info);
        s.push_back((r.consumption - pr.mu) / pr.sigma);
    }
    return s;
}

/**
 * @brief Split-conformal quantile: the ceil((K+1)(1-eps))-th smallest score.
 *
 * When K < 1/eps - 1 that rank exceeds K and no finite multiplier has the
 * coverage guarantee; +infinity is returned as the conservative sentinel.
 */
inline double calibrate_conformal(std::span<const double> scores, double epsilon) {
    if (scores.empty()) throw std::invalid_argument("calibrate_conformal: empty scores");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::domain_error("calibrate_conformal: epsilon must lie in (0, 1)");
    const double k = static_cast<double>(scores.size());
    // guard against 20 * 0.95 landing a hair above 19
    const auto rank = static_cast<std::size_t>(std::ceil((k + 1.0) * (1.0 - epsilon) - 1e-9));
    if (rank > scores.size()) return std::numeric_limits<double>::infinity();
    std::vector<double> s(scores.begin(), scores.end());
    const auto nth = s.begin() + static_cast<std::ptrdiff_t>(rank == 0 ? 0 : rank - 1);
    std::nth_element(s.begin(), nth, s.end());
    return *nth;
}

}  // namespace desira
