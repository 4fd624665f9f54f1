#pragma once

// Aleatoric uncertainty from residual quantiles, plus the CQR-style additive
// baselines. A trio of bagged quantile curves at {alpha/2, 0.5, 1-alpha/2} is
// fit to the training residuals y - f_hat; the CLEAR bands are the (clamped)
// distances between the outer curves and the middle one. Bags are bootstrap
// refits aggregated by the pointwise median; bag_count = 1 fits once on the
// data itself.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "clearuq/core.hpp"
#include "clearuq/dataset.hpp"
#include "clearuq/learners.hpp"
#include "clearuq/parallel.hpp"
#include "clearuq/quantiles.hpp"

namespace clearuq {

// Bagged quantile curves at a fixed list of taus. Kinds whose fitted state is
// tau-free share one set of bag models across all taus; fixed-tau kinds
// (linear_pinball) get one set per tau, fit on the same resamples.
class BaggedQuantileCurves {
public:
    BaggedQuantileCurves() = default;

    BaggedQuantileCurves(const LearnerSpec& spec, std::vector<double> taus, const Matrix& X,
                         std::span<const double> targets, std::size_t bag_count,
                         std::uint64_t seed, unsigned threads = 1)
        : taus_(std::move(taus)), shared_(kind_supports_any_quantile(spec.kind)) {
        if (bag_count < 1) throw std::invalid_argument("BaggedQuantileCurves: bag_count >= 1");
        if (taus_.empty()) throw std::invalid_argument("BaggedQuantileCurves: no taus");
        for (double t : taus_)
            if (!(t > 0.0 && t < 1.0))
                throw std::invalid_argument("BaggedQuantileCurves: taus must be in (0,1)");
        if (!shared_ && spec.kind != LearnerKind::linear_pinball)
            throw std::invalid_argument("BaggedQuantileCurves: learner kind '" + to_string(spec.kind) +
                                        "' does not support quantile prediction");

        const std::size_t n = X.rows();
        const std::size_t sets = shared_ ? 1 : taus_.size();
        bags_.assign(sets, std::vector<ModelPtr>(bag_count));
        parallel_for(bag_count, threads, [&](std::size_t j) {
            Matrix Xb;
            std::vector<double> tb;
            const Matrix* Xf = &X;
            std::span<const double> tf = targets;
            if (bag_count > 1) {
                const auto idx = bootstrap_indices(n, derive_seed(seed, 0xba6, j));
                Xb = X.take_rows(idx);
                tb = take(targets, idx);
                Xf = &Xb;
                tf = tb;
            }
            const std::uint64_t fit_seed = derive_seed(seed, 0xba6, j, 1);
            if (shared_) {
                bags_[0][j] = fit(spec, *Xf, tf, fit_seed);
            } else {
                for (std::size_t t = 0; t < taus_.size(); ++t)
                    bags_[t][j] = fit_at_tau(spec, taus_[t], *Xf, tf, fit_seed);
            }
        });
    }

    const std::vector<double>& taus() const { return taus_; }
    std::size_t bag_count() const { return bags_.empty() ? 0 : bags_[0].size(); }

    // One curve per tau; each value is the nearest-rank median across bags.
    std::vector<std::vector<double>> predict(const Matrix& X) const {
        const std::size_t n = X.rows();
        const std::size_t B = bag_count();
        const std::size_t r_med = nearest_rank_index(0.5, B);
        std::vector<std::vector<double>> curves(taus_.size(), std::vector<double>(n));
        std::vector<double> col(B);

        if (shared_) {
            // per bag: row-major n x taus
            std::vector<std::vector<double>> bag_preds(B);
            for (std::size_t j = 0; j < B; ++j)
                bag_preds[j] = bags_[0][j]->predict_quantiles(X, taus_);
            for (std::size_t t = 0; t < taus_.size(); ++t) {
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < B; ++j) col[j] = bag_preds[j][i * taus_.size() + t];
                    std::nth_element(col.begin(), col.begin() + (r_med - 1), col.end());
                    curves[t][i] = col[r_med - 1];
                }
            }
            return curves;
        }

        for (std::size_t t = 0; t < taus_.size(); ++t) {
            std::vector<std::vector<double>> bag_preds(B);
            for (std::size_t j = 0; j < B; ++j)
                bag_preds[j] = bags_[t][j]->predict_quantile(X, taus_[t]);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < B; ++j) col[j] = bag_preds[j][i];
                std::nth_element(col.begin(), col.begin() + (r_med - 1), col.end());
                curves[t][i] = col[r_med - 1];
            }
        }
        return curves;
    }

private:
    std::vector<double> taus_;
    bool shared_ = true;
    std::vector<std::vector<ModelPtr>> bags_; // [tau set][bag]
};

// Residual quantile trio r_{alpha/2} <= r_{0.5} <= r_{1-alpha/2} (monotone
// after the band clamp), fit to y_train - f_hat_train.
class ResidualQuantileTrio {
public:
    ResidualQuantileTrio() = default;

    ResidualQuantileTrio(const Matrix& X_train, std::span<const double> y_train,
                         std::span<const double> f_hat_train, const LearnerSpec& spec,
                         double alpha, std::size_t bag_count, std::uint64_t seed,
                         unsigned threads = 1)
        : alpha_(alpha) {
        if (!(alpha > 0.0 && alpha < 1.0))
            throw std::invalid_argument("ResidualQuantileTrio: alpha in (0,1)");
        if (y_train.size() != X_train.rows() || f_hat_train.size() != y_train.size())
            throw std::invalid_argument("ResidualQuantileTrio: size mismatch");
        std::vector<double> residuals(y_train.size());
        for (std::size_t i = 0; i < residuals.size(); ++i)
            residuals[i] = y_train[i] - f_hat_train[i];
        curves_ = BaggedQuantileCurves(spec, {alpha / 2.0, 0.5, 1.0 - alpha / 2.0}, X_train,
                                       residuals, bag_count, seed, threads);
    }

    double alpha() const { return alpha_; }

    struct Curves {
        std::vector<double> lo, mid, hi; // residual-scale quantile curves
    };

    Curves predict(const Matrix& X) const {
        auto c = curves_.predict(X);
        return {std::move(c[0]), std::move(c[1]), std::move(c[2])};
    }

private:
    double alpha_ = 0.1;
    BaggedQuantileCurves curves_;
};

struct AleatoricBand {
    std::vector<double> lo_width;     // max(r_0.5 - r_{alpha/2}, 0)
    std::vector<double> hi_width;     // max(r_{1-alpha/2} - r_0.5, 0)
    std::vector<double> center_shift; // r_0.5, diagnostic
};

inline AleatoricBand aleatoric_band(const ResidualQuantileTrio& trio, const Matrix& X) {
    auto curves = trio.predict(X);
    AleatoricBand band;
    const std::size_t n = curves.mid.size();
    band.lo_width.resize(n);
    band.hi_width.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        band.lo_width[i] = std::max(curves.mid[i] - curves.lo[i], 0.0);
        band.hi_width[i] = std::max(curves.hi[i] - curves.mid[i], 0.0);
    }
    band.center_shift = std::move(curves.mid);
    return band;
}

enum class CqrMode { on_targets, on_residuals };

// Additive split-CQR correction: the conformal quantile of
// E_i = max{q_lo(x_i) - y_i, y_i - q_hi(x_i)} (may be negative).
inline double cqr_additive_gamma(std::span<const double> q_lo, std::span<const double> q_hi,
                                 std::span<const double> y, double alpha) {
    const std::size_t n = y.size();
    if (n == 0 || q_lo.size() != n || q_hi.size() != n)
        throw std::invalid_argument("cqr_additive_gamma: bad calibration data");
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i)
        scores[i] = std::max(q_lo[i] - y[i], y[i] - q_hi[i]);
    return conformal_quantile(scores, alpha, OverflowMode::largest_score).value;
}

struct CqrResult {
    IntervalSet test_intervals;
    double gamma = 0.0;
};

// The ALEATORIC (on_targets) and ALEATORIC-R (on_residuals) baselines. The
// residual mode fits the curves to y - f_hat and re-centers every prediction
// by adding f_hat back, so it needs f_hat for all three row sets.
inline CqrResult cqr_baseline(const Matrix& X_train, std::span<const double> y_train,
                              const Matrix& X_cal, std::span<const double> y_cal,
                              const Matrix& X_test, const LearnerSpec& spec, double alpha,
                              CqrMode mode, std::span<const double> f_hat_train,
                              std::span<const double> f_hat_cal, std::span<const double> f_hat_test,
                              std::size_t bag_count, std::uint64_t seed, unsigned threads = 1) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("cqr_baseline: alpha in (0,1)");
    std::vector<double> targets(y_train.begin(), y_train.end());
    if (mode == CqrMode::on_residuals) {
        if (f_hat_train.size() != y_train.size() || f_hat_cal.size() != y_cal.size() ||
            f_hat_test.size() != X_test.rows())
            throw std::invalid_argument("cqr_baseline: on_residuals requires f_hat for train/cal/test");
        for (std::size_t i = 0; i < targets.size(); ++i) targets[i] -= f_hat_train[i];
    }

    BaggedQuantileCurves curves(spec, {alpha / 2.0, 1.0 - alpha / 2.0}, X_train, targets,
                                bag_count, seed, threads);

    auto cal_curves = curves.predict(X_cal);
    if (mode == CqrMode::on_residuals) {
        for (std::size_t i = 0; i < y_cal.size(); ++i) {
            cal_curves[0][i] += f_hat_cal[i];
            cal_curves[1][i] += f_hat_cal[i];
        }
    }
    const double gamma = cqr_additive_gamma(cal_curves[0], cal_curves[1], y_cal, alpha);

    auto test_curves = curves.predict(X_test);
    CqrResult out;
    out.gamma = gamma;
    out.test_intervals.lower.resize(X_test.rows());
    out.test_intervals.upper.resize(X_test.rows());
    for (std::size_t i = 0; i < X_test.rows(); ++i) {
        const double shift = mode == CqrMode::on_residuals ? f_hat_test[i] : 0.0;
        out.test_intervals.lower[i] = test_curves[0][i] + shift - gamma;
        out.test_intervals.upper[i] = test_curves[1][i] + shift + gamma;
    }
    return out;
}

} // namespace clearuq
