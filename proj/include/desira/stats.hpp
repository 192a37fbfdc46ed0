#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace desira {

/// Standard normal CDF via the complementary error function.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

/**
 * @brief Inverse standard normal CDF.
 *
 * Acklam's rational approximation (relative error ~1e-9) followed by one
 * Halley step against the erfc-based CDF, which brings |Phi(x) - p| to the
 * 1e-15 range over the whole open interval.
 */
inline double inv_norm_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::domain_error("inv_norm_cdf: probability must lie in (0, 1)");
    }
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double p_low = 0.02425;

    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }

    // Halley refinement. In the upper tail work with the survival function so
    // the residual is not swamped by cancellation against 1.
    double e;
    if (p > 0.5) {
        e = (1.0 - p) - 0.5 * std::erfc(x / std::numbers::sqrt2);
    } else {
        e = norm_cdf(x) - p;
    }
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    x = x - u / (1.0 + 0.5 * x * u);
    return x;
}

/**
 * @brief Empirical CVaR at tail level alpha (mean of the worst alpha-fraction).
 *
 * Evaluates the Rockafellar-Uryasev minimum
 *   min_eta  eta + 1/(M alpha) * sum_m max(0, s_m - eta)
 * in closed form: with k = floor(M alpha), the k largest samples enter fully
 * and the (k+1)-th enters with weight M alpha - k.
 */
inline double cvar_empirical(std::span<const double> samples, double alpha) {
    if (samples.empty()) {
        throw std::invalid_argument("cvar_empirical: empty sample set");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::domain_error("cvar_empirical: alpha must lie in (0, 1)");
    }
    std::vector<double> s(samples.begin(), samples.end());
    std::sort(s.begin(), s.end(), std::greater<>());
    const double mass = static_cast<double>(s.size()) * alpha;
    const auto k = static_cast<std::size_t>(std::floor(mass));
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += s[j];
    const double frac = mass - static_cast<double>(k);
    if (frac > 0.0 && k < s.size()) acc += frac * s[k];
    return acc / mass;
}

/// Gini coefficient sum_{i,j}|x_i - x_j| / (2 n^2 mean). Returns 0 for an all-zero input.
inline double gini(std::span<const double> values) {
    if (values.empty()) return 0.0;
    std::vector<double> x(values.begin(), values.end());
    for (double v : x) {
        if (v < 0.0) throw std::domain_error("gini: negative entry");
    }
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double total = 0.0;
    double weighted = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        total += x[i];
        weighted += (2.0 * static_cast<double>(i + 1) - n - 1.0) * x[i];
    }
    if (total <= 0.0) return 0.0;
    return weighted / (n * total);
}

inline double mean(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
inline double stddev(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/**
 * @brief Reproducible random stream keyed by (seed, stream_id).
 *
 * The engine is std::mt19937_64, whose output sequence is fixed by the C++
 * standard. The key is mixed through SplitMix64 so neighbouring stream ids
 * give unrelated sequences. Distribution transforms are implemented here
 * rather than taken from <random>, whose distributions are not portable.
 */
class RngStream {
  public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
        : seed_(seed), stream_id_(stream_id),
          engine_(splitmix64(splitmix64(seed) ^ (stream_id * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL))) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer on [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("RngStream::below: n must be positive");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return r % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller, caching the second variate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    /// Fisher-Yates shuffle driven by this stream.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace desira
