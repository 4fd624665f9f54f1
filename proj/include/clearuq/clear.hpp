#pragma once

// The CLEAR calibration engine. An interval is
//
//   C(x) = [f_hat - gamma1*(ale_lo + lambda*epi_lo),
//           f_hat + gamma1*(ale_hi + lambda*epi_hi)]
//
// with lambda trading aleatoric against epistemic width and gamma1 the
// conformal scale factor. For each grid lambda, conformity scores measure how
// far outside the lambda pre-interval each calibration point falls, in units
// of the pre-interval width:
//
//   S_i = max{(l~ - y_i)/(f_hat - l~), (y_i - u~)/(u~ - f_hat)},
//
// so S_i = -1 at the center and S_i = 0 exactly on the pre-interval boundary.
// The conformal quantile of the scores therefore converts to the interval
// scale factor as gamma1 = 1 + quantile (a point is covered by factor g
// exactly when its score is <= g - 1). lambda* minimizes the validation
// quantile loss of the calibrated intervals over the grid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "clearuq/core.hpp"
#include "clearuq/parallel.hpp"
#include "clearuq/quantiles.hpp"
#include "clearuq/random.hpp"

namespace clearuq {

inline constexpr double kWidthEps = 1e-12; // denominator floor in score ratios

struct UncertaintyComponents {
    std::vector<double> f_hat;
    std::vector<double> ale_lo, ale_hi; // aleatoric widths, >= 0
    std::vector<double> epi_lo, epi_hi; // epistemic widths, >= 0
    std::vector<double> y;              // empty when targets are unknown

    std::size_t size() const { return f_hat.size(); }
    bool has_y() const { return !y.empty(); }

    void validate(bool need_y) const {
        const std::size_t n = f_hat.size();
        if (n == 0) throw std::invalid_argument("UncertaintyComponents: empty");
        auto check = [n](const std::vector<double>& v, const char* name, bool width) {
            if (v.size() != n)
                throw std::invalid_argument(std::string("UncertaintyComponents: '") + name +
                                            "' has mismatched length");
            for (std::size_t i = 0; i < n; ++i) {
                if (!std::isfinite(v[i]))
                    throw std::invalid_argument(std::string("UncertaintyComponents: non-finite '") +
                                                name + "' at row " + std::to_string(i));
                if (width && v[i] < 0.0)
                    throw std::invalid_argument(std::string("UncertaintyComponents: negative '") +
                                                name + "' at row " + std::to_string(i));
            }
        };
        check(f_hat, "f_hat", false);
        check(ale_lo, "ale_lo", true);
        check(ale_hi, "ale_hi", true);
        check(epi_lo, "epi_lo", true);
        check(epi_hi, "epi_hi", true);
        if (need_y && y.size() != n)
            throw std::invalid_argument("UncertaintyComponents: missing y");
        if (!y.empty()) check(y, "y", false);
    }

    UncertaintyComponents take(std::span<const std::size_t> idx) const {
        UncertaintyComponents out;
        out.f_hat = clearuq::take(f_hat, idx);
        out.ale_lo = clearuq::take(ale_lo, idx);
        out.ale_hi = clearuq::take(ale_hi, idx);
        out.epi_lo = clearuq::take(epi_lo, idx);
        out.epi_hi = clearuq::take(epi_hi, idx);
        if (!y.empty()) out.y = clearuq::take(y, idx);
        return out;
    }
};

struct LambdaGrid {
    std::vector<double> values;

    void validate() const {
        if (values.empty()) throw std::invalid_argument("LambdaGrid: empty");
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!std::isfinite(values[i]) || values[i] < 0.0)
                throw std::invalid_argument("LambdaGrid: values must be finite and >= 0");
            if (i > 0 && values[i] <= values[i - 1])
                throw std::invalid_argument("LambdaGrid: values must be strictly increasing");
        }
    }
};

// 10 linear points 0.00..0.09, 4000 log-spaced points on [0.1, 100], and 1.0
// forced in; sorted and deduplicated.
inline LambdaGrid default_lambda_grid() {
    std::vector<double> v;
    for (int i = 0; i < 10; ++i) v.push_back(0.01 * i);
    const double lo = std::log(0.1), hi = std::log(100.0);
    const int m = 4000;
    for (int i = 0; i < m; ++i)
        v.push_back(std::exp(lo + (hi - lo) * static_cast<double>(i) / (m - 1)));
    v.push_back(1.0);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    LambdaGrid grid{std::move(v)};
    grid.validate();
    return grid;
}

// Pre-interval widths at a given lambda. Zero epistemic widths contribute
// nothing even when lambda is +infinity (the gamma1=1 variant can return an
// infinite lambda*).
inline void lambda_widths(const UncertaintyComponents& c, double lambda, std::size_t i,
                          double& w_lo, double& w_hi) {
    w_lo = c.ale_lo[i] + (c.epi_lo[i] > 0.0 ? lambda * c.epi_lo[i] : 0.0);
    w_hi = c.ale_hi[i] + (c.epi_hi[i] > 0.0 ? lambda * c.epi_hi[i] : 0.0);
}

// Conformity scores at lambda; requires y. A violated zero-width side scores
// +infinity; otherwise denominators are floored at kWidthEps.
inline std::vector<double> conformity_scores(const UncertaintyComponents& comp, double lambda) {
    comp.validate(true);
    if (!(lambda >= 0.0)) throw std::invalid_argument("conformity_scores: lambda must be >= 0");
    std::vector<double> s(comp.size());
    for (std::size_t i = 0; i < comp.size(); ++i) {
        double w_lo, w_hi;
        lambda_widths(comp, lambda, i, w_lo, w_hi);
        const double num_lo = -w_lo - (comp.y[i] - comp.f_hat[i]); // l~ - y
        const double num_hi = (comp.y[i] - comp.f_hat[i]) - w_hi;  // y - u~
        auto ratio = [](double num, double w) {
            if (w <= 0.0 && num > 0.0) return std::numeric_limits<double>::infinity();
            return num / std::max(w, kWidthEps);
        };
        s[i] = std::max(ratio(num_lo, w_lo), ratio(num_hi, w_hi));
    }
    return s;
}

// Raw conformal quantile of the scores: the ceil((1-alpha)(n+1))-th smallest,
// falling back to the largest score or +infinity on rank overflow. Note this
// is on the score scale; the interval multiplier is 1 + this value.
inline double gamma1_for_lambda(std::span<const double> scores, double alpha, OverflowMode mode) {
    if (scores.empty()) throw std::invalid_argument("gamma1_for_lambda: empty scores");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("gamma1_for_lambda: alpha in (0,1)");
    return conformal_quantile(scores, alpha, mode).value;
}

// Calibrated interval with the final multiplicative factor gamma1 (>= 0, may
// be +infinity). Zero-width sides stay at f_hat even for infinite gamma1.
inline IntervalSet calibrated_interval(const UncertaintyComponents& comp, double lambda,
                                       double gamma1) {
    comp.validate(false);
    if (!(lambda >= 0.0)) throw std::invalid_argument("calibrated_interval: lambda must be >= 0");
    if (!(gamma1 >= 0.0)) throw std::invalid_argument("calibrated_interval: gamma1 must be >= 0");
    IntervalSet out;
    out.lower.resize(comp.size());
    out.upper.resize(comp.size());
    for (std::size_t i = 0; i < comp.size(); ++i) {
        double w_lo, w_hi;
        lambda_widths(comp, lambda, i, w_lo, w_hi);
        out.lower[i] = comp.f_hat[i] - (w_lo > 0.0 ? gamma1 * w_lo : 0.0);
        out.upper[i] = comp.f_hat[i] + (w_hi > 0.0 ? gamma1 * w_hi : 0.0);
    }
    return out;
}

// Mean of [QL_{alpha/2}(y, lower) + QL_{1-alpha/2}(y, upper)] / 2 with
// QL_tau(y, q) = (y - q) * (tau - 1{y <= q}). Non-finite bounds give +infinity
// (used to rule out unbounded intervals during lambda selection).
inline double quantile_loss_of_intervals(const IntervalSet& intervals, std::span<const double> y,
                                         double alpha) {
    const std::size_t n = y.size();
    if (n == 0 || intervals.lower.size() != n || intervals.upper.size() != n)
        throw std::invalid_argument("quantile_loss_of_intervals: size mismatch");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("quantile_loss_of_intervals: alpha in (0,1)");
    const double tau_lo = alpha / 2.0, tau_hi = 1.0 - alpha / 2.0;
    auto pinball = [](double y_i, double q, double tau) {
        return (y_i - q) * (tau - (y_i <= q ? 1.0 : 0.0));
    };
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(intervals.lower[i]) || !std::isfinite(intervals.upper[i]))
            return std::numeric_limits<double>::infinity();
        total += 0.5 * (pinball(y[i], intervals.lower[i], tau_lo) +
                        pinball(y[i], intervals.upper[i], tau_hi));
    }
    return total / static_cast<double>(n);
}

enum class ClearMode {
    reuse_val,    // calibrate and select lambda on the same rows
    conformalized // split rows; select lambda on one part, calibrate on the other
};

struct ClearOptions {
    ClearMode mode = ClearMode::reuse_val;
    double conformal_fraction = 0.5; // share of rows used for lambda selection
    std::uint64_t seed = 0;          // conformalized split shuffle
    unsigned threads = 1;
};

struct ClearFit {
    double lambda_star = 0.0;
    double gamma1 = 0.0; // final width multiplier, >= 0, +inf possible
    double gamma2 = 0.0; // lambda_star * gamma1
    double alpha = 0.1;
    double val_quantile_loss = 0.0;
    std::size_t grid_size = 0;
    std::vector<std::pair<double, double>> per_lambda_loss; // (lambda, mean QL)
};

namespace detail {

struct LambdaEval {
    double loss = std::numeric_limits<double>::infinity();
    double gamma1 = 0.0; // final factor
};

// Calibrate gamma1 on `cal` at one lambda and score the resulting intervals
// on `val` (which may be the same object).
inline LambdaEval evaluate_lambda(const UncertaintyComponents& cal,
                                  const UncertaintyComponents& val, double lambda, double alpha,
                                  OverflowMode mode) {
    const std::vector<double> scores = conformity_scores(cal, lambda);
    const double q = conformal_quantile(scores, alpha, mode).value;
    const double gamma1 = 1.0 + q;
    LambdaEval ev;
    ev.gamma1 = gamma1;
    if (!std::isfinite(gamma1)) return ev; // loss stays +inf
    ev.loss = quantile_loss_of_intervals(calibrated_interval(val, lambda, gamma1), val.y, alpha);
    if (!std::isfinite(ev.loss)) ev.loss = std::numeric_limits<double>::infinity();
    return ev;
}

inline std::size_t argmin_lambda(const std::vector<LambdaEval>& evals) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < evals.size(); ++i)
        if (evals[i].loss < evals[best].loss - 1e-12) best = i;
    return best;
}

} // namespace detail

// Fit lambda* and gamma1 on calibration components (y required).
inline ClearFit fit_clear(const UncertaintyComponents& comp, const LambdaGrid& grid, double alpha,
                          const ClearOptions& options = {}) {
    comp.validate(true);
    grid.validate();
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("fit_clear: alpha in (0,1)");

    const UncertaintyComponents* sel_cal = &comp; // rows gamma1 is calibrated on per lambda
    const UncertaintyComponents* sel_val = &comp; // rows the loss is scored on
    UncertaintyComponents val_part, cal_part;

    if (options.mode == ClearMode::conformalized) {
        const std::size_t n = comp.size();
        const std::size_t n_val =
            static_cast<std::size_t>(std::floor(static_cast<double>(n) * options.conformal_fraction));
        if (n_val < 1 || n_val >= n)
            throw std::invalid_argument("fit_clear: conformalized mode needs nonempty split parts");
        Rng rng(derive_seed(options.seed, 0xc0f));
        const std::vector<std::size_t> perm = rng.permutation(n);
        std::vector<std::size_t> val_idx(perm.begin(), perm.begin() + n_val);
        std::vector<std::size_t> cal_idx(perm.begin() + n_val, perm.end());
        val_part = comp.take(val_idx);
        cal_part = comp.take(cal_idx);
        sel_cal = &val_part; // lambda selection calibrates and scores on the val part
        sel_val = &val_part;
    }

    std::vector<detail::LambdaEval> evals(grid.values.size());
    parallel_for(grid.values.size(), options.threads, [&](std::size_t i) {
        evals[i] = detail::evaluate_lambda(*sel_cal, *sel_val, grid.values[i], alpha,
                                           OverflowMode::largest_score);
    });

    const std::size_t best = detail::argmin_lambda(evals);

    ClearFit fit;
    fit.alpha = alpha;
    fit.grid_size = grid.values.size();
    fit.lambda_star = grid.values[best];
    fit.gamma1 = evals[best].gamma1;
    fit.val_quantile_loss = evals[best].loss;
    fit.per_lambda_loss.reserve(grid.values.size());
    for (std::size_t i = 0; i < grid.values.size(); ++i)
        fit.per_lambda_loss.emplace_back(grid.values[i], evals[i].loss);

    if (options.mode == ClearMode::conformalized) {
        const std::vector<double> scores = conformity_scores(cal_part, fit.lambda_star);
        fit.gamma1 = 1.0 + conformal_quantile(scores, alpha, OverflowMode::infinite).value;
    }

    fit.gamma2 = fit.lambda_star * fit.gamma1;
    if (std::isnan(fit.gamma2)) fit.gamma2 = 0.0; // lambda* = 0 with infinite gamma1
    return fit;
}

enum class FixedVariant {
    lambda_equals_1, // lambda fixed at 1, gamma1 conformal
    gamma1_equals_1  // gamma1 fixed at 1, lambda conformal
};

// The two single-parameter ablations.
inline ClearFit fixed_variant(const UncertaintyComponents& comp, double alpha, FixedVariant which) {
    comp.validate(true);
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("fixed_variant: alpha in (0,1)");
    ClearFit fit;
    fit.alpha = alpha;
    fit.grid_size = 1;

    if (which == FixedVariant::lambda_equals_1) {
        const auto ev = detail::evaluate_lambda(comp, comp, 1.0, alpha, OverflowMode::largest_score);
        fit.lambda_star = 1.0;
        fit.gamma1 = ev.gamma1;
        fit.val_quantile_loss = ev.loss;
        fit.per_lambda_loss = {{1.0, ev.loss}};
    } else {
        // Per-point minimal lambda that covers y_i with gamma1 = 1 on top of
        // the aleatoric-only interval; conformal quantile of those.
        std::vector<double> lambdas(comp.size());
        for (std::size_t i = 0; i < comp.size(); ++i) {
            const double dev = comp.y[i] - comp.f_hat[i];
            auto ratio = [](double num, double den) {
                if (num <= 0.0) return 0.0;
                if (den <= 0.0) return std::numeric_limits<double>::infinity();
                return num / std::max(den, kWidthEps);
            };
            const double need_lo = ratio(-dev - comp.ale_lo[i], comp.epi_lo[i]);
            const double need_hi = ratio(dev - comp.ale_hi[i], comp.epi_hi[i]);
            lambdas[i] = std::max(need_lo, need_hi);
        }
        fit.lambda_star = conformal_quantile(lambdas, alpha, OverflowMode::largest_score).value;
        fit.gamma1 = 1.0;
        if (std::isfinite(fit.lambda_star)) {
            fit.val_quantile_loss = quantile_loss_of_intervals(
                calibrated_interval(comp, fit.lambda_star, 1.0), comp.y, alpha);
        } else {
            fit.val_quantile_loss = std::numeric_limits<double>::infinity();
        }
        fit.per_lambda_loss = {{fit.lambda_star, fit.val_quantile_loss}};
    }
    fit.gamma2 = fit.lambda_star * fit.gamma1;
    if (std::isnan(fit.gamma2)) fit.gamma2 = 0.0;
    return fit;
}

// Constant symmetric half-width: conformal quantile of |y - f_hat|.
inline double naive_baseline(std::span<const double> f_hat, std::span<const double> y,
                             double alpha) {
    const std::size_t n = y.size();
    if (n == 0 || f_hat.size() != n) throw std::invalid_argument("naive_baseline: size mismatch");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("naive_baseline: alpha in (0,1)");
    std::vector<double> abs_res(n);
    for (std::size_t i = 0; i < n; ++i) abs_res[i] = std::abs(y[i] - f_hat[i]);
    return conformal_quantile(abs_res, alpha, OverflowMode::largest_score).value;
}

} // namespace clearuq
