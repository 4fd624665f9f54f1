#pragma once

// Order-statistic and quantile conventions shared across the library.
//
// Empirical quantiles use the nearest-rank rule: the tau-quantile of m values
// is the ceil(tau*m)-th smallest. Conformal calibration uses the
// ceil((1-alpha)*(n+1))-th smallest score; that index can exceed n, which the
// caller resolves (largest score or +infinity).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace clearuq {

// Guard against representation error in products like 0.95*20: a true integer
// may land a hair above it in floating point and get ceil'ed one rank too far.
inline constexpr double kRankEps = 1e-9;

// 1-based nearest-rank index, clamped into [1, m].
inline std::size_t nearest_rank_index(double tau, std::size_t m) {
    if (m == 0) throw std::invalid_argument("nearest_rank_index: empty sample");
    double raw = std::ceil(tau * static_cast<double>(m) - kRankEps);
    if (raw < 1.0) return 1;
    if (raw >= static_cast<double>(m)) return m;
    return static_cast<std::size_t>(raw);
}

// k-th smallest (1-based) of the values, by partial selection.
inline double kth_smallest(std::vector<double> values, std::size_t k) {
    if (k < 1 || k > values.size()) throw std::invalid_argument("kth_smallest: rank out of range");
    std::nth_element(values.begin(), values.begin() + (k - 1), values.end());
    return values[k - 1];
}

inline double nearest_rank_quantile(std::vector<double> values, double tau) {
    const std::size_t k = nearest_rank_index(tau, values.size());
    return kth_smallest(std::move(values), k);
}

inline double nearest_rank_quantile(std::span<const double> values, double tau) {
    return nearest_rank_quantile(std::vector<double>(values.begin(), values.end()), tau);
}

// Conformal rank ceil((1-alpha)*(n+1)); may exceed n (overflow).
inline std::size_t conformal_rank(double alpha, std::size_t n) {
    if (n == 0) throw std::invalid_argument("conformal_rank: empty calibration set");
    double raw = std::ceil((1.0 - alpha) * static_cast<double>(n + 1) - kRankEps);
    if (raw < 1.0) return 1;
    return static_cast<std::size_t>(raw);
}

enum class OverflowMode {
    largest_score, // rank > n falls back to the largest score
    infinite       // rank > n yields +infinity (finite-sample exact mode)
};

struct ConformalQuantile {
    double value = 0.0;
    bool overflowed = false;
};

inline ConformalQuantile conformal_quantile(std::span<const double> scores, double alpha,
                                            OverflowMode mode) {
    const std::size_t n = scores.size();
    const std::size_t rank = conformal_rank(alpha, n);
    std::vector<double> buf(scores.begin(), scores.end());
    if (rank > n) {
        if (mode == OverflowMode::infinite)
            return {std::numeric_limits<double>::infinity(), true};
        return {*std::max_element(buf.begin(), buf.end()), true};
    }
    return {kth_smallest(std::move(buf), rank), false};
}

// Inverse standard normal CDF. Acklam's rational approximation followed by one
// Halley step against erfc; absolute error well below 1e-9 over (0, 1).
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p must be in (0,1)");

    static constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                    -2.759285104469687e+02, 1.383577518672690e+02,
                                    -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                    -1.556989798598866e+02, 6.680131188771972e+01,
                                    -1.328068155288572e+01};
    static constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                    -2.400758277161838e+00, -2.549732539343734e+00,
                                    4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                    2.445134137142996e+00, 3.754408661907416e+00};
    static constexpr double p_low = 0.02425;

    double x;
    if (p < p_low) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        double q = p - 0.5;
        double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }

    // Halley refinement: e = Phi(x) - p.
    const double e = 0.5 * std::erfc(-x / 1.4142135623730950488) - p;
    const double u = e * 2.5066282746310005024 * std::exp(0.5 * x * x);
    x = x - u / (1.0 + 0.5 * x * u);
    return x;
}

} // namespace clearuq
