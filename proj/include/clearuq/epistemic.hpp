#pragma once

// Epistemic uncertainty via a PCS-style bootstrap ensemble: rank the learner
// pool by validation RMSE, keep the top k kinds, refit each on b bootstrap
// resamples, and read the center and epistemic widths off the pointwise
// member-prediction quantiles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "clearuq/core.hpp"
#include "clearuq/dataset.hpp"
#include "clearuq/learners.hpp"
#include "clearuq/parallel.hpp"
#include "clearuq/quantiles.hpp"

namespace clearuq {

struct RankedSpec {
    LearnerSpec spec;
    double val_rmse = 0.0;
    std::size_t pool_index = 0;
};

// Fit every pool entry once on train, rank by validation RMSE of the mean
// prediction (ties keep pool order), return the best k.
inline std::vector<RankedSpec> select_top_k(const std::vector<LearnerSpec>& pool, const Matrix& X_train,
                                            std::span<const double> y_train, const Matrix& X_val,
                                            std::span<const double> y_val, std::size_t k,
                                            std::uint64_t seed) {
    if (pool.empty()) throw std::invalid_argument("select_top_k: empty learner pool");
    if (k < 1 || k > pool.size())
        throw std::invalid_argument("select_top_k: k must be in [1, pool size]");
    if (X_val.rows() == 0 || X_val.rows() != y_val.size())
        throw std::invalid_argument("select_top_k: bad validation data");

    std::vector<RankedSpec> ranked;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        ModelPtr model = fit(pool[i], X_train, y_train, derive_seed(seed, 0x5e1ec7, i));
        const std::vector<double> pred = model->predict_mean(X_val);
        double sse = 0.0;
        for (std::size_t j = 0; j < pred.size(); ++j) {
            const double e = pred[j] - y_val[j];
            sse += e * e;
        }
        ranked.push_back({pool[i], std::sqrt(sse / static_cast<double>(pred.size())), i});
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const RankedSpec& a, const RankedSpec& b) {
        return a.val_rmse < b.val_rmse;
    });
    ranked.resize(k);
    return ranked;
}

struct PcsEnsemble {
    std::vector<ModelPtr> members; // spec-major, bootstrap index within spec

    std::size_t size() const { return members.size(); }
};

// b bootstrap refits per selected spec. b = 1 fits on the identity resample
// (test hook for deterministic single-member ensembles).
inline PcsEnsemble build_ensemble(const std::vector<LearnerSpec>& specs, const Matrix& X_train,
                                  std::span<const double> y_train, std::size_t b,
                                  std::uint64_t seed, unsigned threads = 1) {
    if (specs.empty()) throw std::invalid_argument("build_ensemble: no specs");
    if (b < 1) throw std::invalid_argument("build_ensemble: b must be >= 1");
    const std::size_t n = X_train.rows();
    if (n == 0 || n != y_train.size()) throw std::invalid_argument("build_ensemble: bad training data");

    PcsEnsemble ens;
    ens.members.resize(specs.size() * b);
    parallel_for(specs.size() * b, threads, [&](std::size_t m) {
        const std::size_t j = m / b; // spec index
        const std::size_t i = m % b; // bootstrap index
        if (b == 1) {
            ens.members[m] = fit(specs[j], X_train, y_train, derive_seed(seed, 0xe25, j, i, 1));
            return;
        }
        const auto idx = bootstrap_indices(n, derive_seed(seed, 0xe25, j, i));
        const Matrix Xb = X_train.take_rows(idx);
        const std::vector<double> yb = take(y_train, idx);
        ens.members[m] = fit(specs[j], Xb, yb, derive_seed(seed, 0xe25, j, i, 1));
    });
    return ens;
}

struct EpistemicBand {
    std::vector<double> f_hat;    // pointwise member median
    std::vector<double> lo_width; // f_hat - member alpha/2 quantile, >= 0
    std::vector<double> hi_width; // member (1 - alpha/2) quantile - f_hat, >= 0
};

inline EpistemicBand epistemic_band(const PcsEnsemble& ens, const Matrix& X, double alpha) {
    if (ens.members.empty()) throw std::invalid_argument("epistemic_band: empty ensemble");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("epistemic_band: alpha in (0,1)");
    const std::size_t m = ens.members.size();
    const std::size_t n = X.rows();

    std::vector<std::vector<double>> preds(m);
    for (std::size_t j = 0; j < m; ++j) preds[j] = ens.members[j]->predict_mean(X);

    const std::size_t r_med = nearest_rank_index(0.5, m);
    const std::size_t r_lo = nearest_rank_index(alpha / 2.0, m);
    const std::size_t r_hi = nearest_rank_index(1.0 - alpha / 2.0, m);

    EpistemicBand band;
    band.f_hat.resize(n);
    band.lo_width.resize(n);
    band.hi_width.resize(n);
    std::vector<double> col(m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) col[j] = preds[j][i];
        std::sort(col.begin(), col.end());
        const double med = col[r_med - 1];
        band.f_hat[i] = med;
        band.lo_width[i] = med - col[r_lo - 1];
        band.hi_width[i] = col[r_hi - 1] - med;
    }
    return band;
}

// Smallest multiplicative factor on the epistemic widths reaching the
// finite-sample coverage target: gamma = ceil((1-alpha)(n+1))-th smallest of
//   c_i = max{(f_hat - y)/lo_width, (y - f_hat)/hi_width, 0},
// with 0/0 -> 0 and violation over a zero width -> +infinity.
inline double calibrate_pcs_multiplicative(const EpistemicBand& band, std::span<const double> y,
                                           double alpha) {
    const std::size_t n = y.size();
    if (n == 0 || band.f_hat.size() != n)
        throw std::invalid_argument("calibrate_pcs_multiplicative: bad calibration data");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("calibrate_pcs_multiplicative: alpha in (0,1)");

    auto side_ratio = [](double num, double den) {
        if (num <= 0.0) return 0.0;
        if (den <= 0.0) return std::numeric_limits<double>::infinity();
        return num / den;
    };
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double lo = side_ratio(band.f_hat[i] - y[i], band.lo_width[i]);
        const double hi = side_ratio(y[i] - band.f_hat[i], band.hi_width[i]);
        c[i] = std::max(lo, hi);
    }
    return conformal_quantile(c, alpha, OverflowMode::largest_score).value;
}

// [f_hat -/+ gamma * width], with zero widths left untouched so an infinite
// gamma cannot poison a zero-width side.
inline IntervalSet pcs_intervals(const EpistemicBand& band, double gamma) {
    IntervalSet out;
    out.lower.resize(band.f_hat.size());
    out.upper.resize(band.f_hat.size());
    for (std::size_t i = 0; i < band.f_hat.size(); ++i) {
        const double lo = band.lo_width[i] > 0.0 ? gamma * band.lo_width[i] : 0.0;
        const double hi = band.hi_width[i] > 0.0 ? gamma * band.hi_width[i] : 0.0;
        out.lower[i] = band.f_hat[i] - lo;
        out.upper[i] = band.f_hat[i] + hi;
    }
    return out;
}

} // namespace clearuq
