#pragma once

// Evaluation metrics for interval predictions. NCIW first rescales the
// interval widths by the smallest factor c that reaches the target coverage
// on the evaluation points themselves (nearest-rank over N, no finite-sample
// correction), making width comparisons fair across methods with different
// realized coverage.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "clearuq/clear.hpp"
#include "clearuq/core.hpp"
#include "clearuq/quantiles.hpp"

namespace clearuq {

inline void check_eval_inputs(const IntervalSet& intervals, std::span<const double> y) {
    if (y.empty() || intervals.lower.size() != y.size() || intervals.upper.size() != y.size())
        throw std::invalid_argument("metrics: intervals and y must be nonempty and equal length");
}

// Share of targets inside the closed interval.
inline double picp(const IntervalSet& intervals, std::span<const double> y) {
    check_eval_inputs(intervals, y);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (intervals.lower[i] <= y[i] && y[i] <= intervals.upper[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(y.size());
}

inline double target_range(std::span<const double> y) {
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    const double range = *hi - *lo;
    if (!(range > 0.0)) throw std::invalid_argument("metrics: target range is zero");
    return range;
}

// Mean width normalized by the target range.
inline double niw(const IntervalSet& intervals, std::span<const double> y) {
    check_eval_inputs(intervals, y);
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) total += intervals.upper[i] - intervals.lower[i];
    return total / static_cast<double>(y.size()) / target_range(y);
}

// Average interval score: width plus (2/alpha)-weighted violation distances.
inline double aisl(const IntervalSet& intervals, std::span<const double> y, double alpha) {
    check_eval_inputs(intervals, y);
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("aisl: alpha in (0,1)");
    const double penalty = 2.0 / alpha;
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double l = intervals.lower[i], u = intervals.upper[i];
        total += (u - l);
        if (y[i] < l) total += penalty * (l - y[i]);
        if (y[i] > u) total += penalty * (y[i] - u);
    }
    return total / static_cast<double>(y.size());
}

struct NciwResult {
    double nciw = 0.0;
    double c_test_cal = 0.0; // the rescaling factor; +inf if coverage unreachable
};

// Widths are measured around f_hat: lo_i = f_hat_i - lower_i etc. The factor
// c is the ceil((1-alpha)*N)-th smallest of the per-point minimal factors
// c_i = max{(f_hat-y)/lo, (y-f_hat)/hi, 0} (0/0 -> 0, violation over a zero
// width -> +inf).
inline NciwResult nciw(const IntervalSet& intervals, std::span<const double> f_hat,
                       std::span<const double> y, double alpha) {
    check_eval_inputs(intervals, y);
    if (f_hat.size() != y.size()) throw std::invalid_argument("nciw: f_hat size mismatch");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("nciw: alpha in (0,1)");
    const std::size_t n = y.size();

    std::vector<double> lo_w(n), hi_w(n), c(n);
    for (std::size_t i = 0; i < n; ++i) {
        lo_w[i] = f_hat[i] - intervals.lower[i];
        hi_w[i] = intervals.upper[i] - f_hat[i];
        if (lo_w[i] < 0.0 || hi_w[i] < 0.0)
            throw std::invalid_argument("nciw: f_hat outside interval at row " + std::to_string(i));
        auto ratio = [](double num, double den) {
            if (num <= 0.0) return 0.0;
            if (den <= 0.0) return std::numeric_limits<double>::infinity();
            return num / den;
        };
        c[i] = std::max(ratio(f_hat[i] - y[i], lo_w[i]), ratio(y[i] - f_hat[i], hi_w[i]));
    }

    const std::size_t rank = nearest_rank_index(1.0 - alpha, n);
    NciwResult out;
    out.c_test_cal = kth_smallest(c, rank);
    if (!std::isfinite(out.c_test_cal)) {
        out.nciw = std::numeric_limits<double>::infinity();
        return out;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += out.c_test_cal * (lo_w[i] + hi_w[i]);
    out.nciw = total / static_cast<double>(n) / target_range(y);
    return out;
}

struct MetricsReport {
    double picp = 0.0;
    double niw = 0.0;
    double nciw = 0.0;
    double c_test_cal = 0.0;
    double aisl = 0.0;
    double quantile_loss = 0.0;
};

inline MetricsReport evaluate(const IntervalSet& intervals, std::span<const double> f_hat,
                              std::span<const double> y, double alpha) {
    MetricsReport r;
    r.picp = picp(intervals, y);
    r.niw = niw(intervals, y);
    const NciwResult nr = nciw(intervals, f_hat, y, alpha);
    r.nciw = nr.nciw;
    r.c_test_cal = nr.c_test_cal;
    r.aisl = aisl(intervals, y, alpha);
    r.quantile_loss = quantile_loss_of_intervals(intervals, y, alpha);
    return r;
}

} // namespace clearuq
