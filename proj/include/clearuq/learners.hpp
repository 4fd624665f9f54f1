#pragma once

// Base estimators. Four kinds share one interface:
//
//   regression_tree  CART on squared error; mean prediction only.
//   quantile_forest  bagged CART trees answering any quantile from the pooled
//                    leaf targets (nearest rank, so curves are monotone in tau).
//   knn_quantile     empirical quantile of the k nearest targets (Euclidean,
//                    distance ties broken by lower row index).
//   linear_pinball   linear model fit at one fixed tau by full-batch
//                    subgradient descent (step c/sqrt(t), zero init, best
//                    iterate kept).
//
// predict_mean falls back to tau = 0.5 for quantile-capable kinds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "clearuq/core.hpp"
#include "clearuq/dataset.hpp"
#include "clearuq/quantiles.hpp"
#include "clearuq/random.hpp"
#include "clearuq/tree.hpp"

namespace clearuq {

enum class LearnerKind { regression_tree, quantile_forest, knn_quantile, linear_pinball };

inline LearnerKind learner_kind_from_string(const std::string& s) {
    if (s == "regression_tree") return LearnerKind::regression_tree;
    if (s == "quantile_forest") return LearnerKind::quantile_forest;
    if (s == "knn_quantile") return LearnerKind::knn_quantile;
    if (s == "linear_pinball") return LearnerKind::linear_pinball;
    throw std::invalid_argument("unknown learner kind: " + s);
}

inline std::string to_string(LearnerKind k) {
    switch (k) {
        case LearnerKind::regression_tree: return "regression_tree";
        case LearnerKind::quantile_forest: return "quantile_forest";
        case LearnerKind::knn_quantile: return "knn_quantile";
        case LearnerKind::linear_pinball: return "linear_pinball";
    }
    return "?";
}

struct LearnerSpec {
    LearnerKind kind = LearnerKind::quantile_forest;
    std::map<std::string, double> hyperparameters;
};

inline bool kind_supports_any_quantile(LearnerKind k) {
    return k == LearnerKind::quantile_forest || k == LearnerKind::knn_quantile;
}

class FittedModel {
public:
    virtual ~FittedModel() = default;
    virtual LearnerKind kind() const = 0;
    virtual std::size_t dimension() const = 0;
    virtual bool supports_quantile(double tau) const = 0;
    virtual bool supports_mean() const = 0;
    virtual std::vector<double> predict_mean(const Matrix& X) const = 0;
    virtual std::vector<double> predict_quantile(const Matrix& X, double tau) const = 0;

    // Row-major (X.rows() x taus.size()) in one pass where the kind allows it.
    virtual std::vector<double> predict_quantiles(const Matrix& X,
                                                  std::span<const double> taus) const {
        std::vector<double> out(X.rows() * taus.size());
        for (std::size_t t = 0; t < taus.size(); ++t) {
            std::vector<double> q = predict_quantile(X, taus[t]);
            for (std::size_t i = 0; i < q.size(); ++i) out[i * taus.size() + t] = q[i];
        }
        return out;
    }

protected:
    void check_dimension(const Matrix& X) const {
        if (X.cols() != dimension())
            throw std::invalid_argument("predict: X has dimension " + std::to_string(X.cols()) +
                                        ", model expects " + std::to_string(dimension()));
    }
    static void check_tau(double tau) {
        if (!(tau > 0.0 && tau < 1.0))
            throw std::invalid_argument("predict_quantile: tau must be in (0,1)");
    }
};

using ModelPtr = std::shared_ptr<const FittedModel>;

namespace detail {

class Hyper {
public:
    Hyper(const std::map<std::string, double>& params, std::initializer_list<const char*> allowed)
        : params_(params) {
        for (const auto& [key, _] : params) {
            bool ok = false;
            for (const char* a : allowed) ok = ok || key == a;
            if (!ok) throw std::invalid_argument("unknown hyperparameter '" + key + "'");
        }
    }

    double value(const std::string& key, double fallback) const {
        auto it = params_.find(key);
        return it == params_.end() ? fallback : it->second;
    }

    std::size_t count(const std::string& key, std::size_t fallback) const {
        auto it = params_.find(key);
        if (it == params_.end()) return fallback;
        if (!(it->second >= 1.0) || it->second != std::floor(it->second))
            throw std::invalid_argument("hyperparameter '" + key + "' must be a positive integer");
        return static_cast<std::size_t>(it->second);
    }

    // -1 when absent (unbounded depth).
    int depth(const std::string& key) const {
        auto it = params_.find(key);
        if (it == params_.end()) return -1;
        if (!(it->second >= 0.0) || it->second != std::floor(it->second))
            throw std::invalid_argument("hyperparameter '" + key + "' must be a nonnegative integer");
        return static_cast<int>(it->second);
    }

private:
    const std::map<std::string, double>& params_;
};

inline void check_training_data(const Matrix& X, std::span<const double> y, std::size_t min_rows) {
    if (X.rows() == 0 || X.cols() == 0) throw std::invalid_argument("fit: empty training data");
    if (X.rows() != y.size()) throw std::invalid_argument("fit: X and y row counts differ");
    if (X.rows() < min_rows)
        throw std::invalid_argument("fit: need at least " + std::to_string(min_rows) + " rows");
}

inline std::vector<std::size_t> identity_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

class RegressionTreeModel final : public FittedModel {
public:
    RegressionTreeModel(const Matrix& X, std::span<const double> y, const Hyper& h) {
        const std::size_t min_leaf = h.count("min_leaf", 5);
        check_training_data(X, y, std::max<std::size_t>(2, min_leaf));
        const auto sample = identity_indices(X.rows());
        tree_.fit(X, y, sample, min_leaf, h.depth("max_depth"), false);
    }

    LearnerKind kind() const override { return LearnerKind::regression_tree; }
    std::size_t dimension() const override { return tree_.dimension(); }
    bool supports_quantile(double) const override { return false; }
    bool supports_mean() const override { return true; }

    std::vector<double> predict_mean(const Matrix& X) const override {
        check_dimension(X);
        std::vector<double> out(X.rows());
        for (std::size_t i = 0; i < X.rows(); ++i) out[i] = tree_.predict_mean(X.row(i));
        return out;
    }

    std::vector<double> predict_quantile(const Matrix&, double) const override {
        throw std::invalid_argument("regression_tree does not support quantile prediction");
    }

private:
    RegressionTree tree_;
};

class QuantileForestModel final : public FittedModel {
public:
    QuantileForestModel(const Matrix& X, std::span<const double> y, const Hyper& h,
                        std::uint64_t seed) {
        const std::size_t min_leaf = h.count("min_leaf", 10);
        const std::size_t n_trees = h.count("trees", 100);
        check_training_data(X, y, std::max<std::size_t>(2, min_leaf));
        const int max_depth = h.depth("max_depth");
        const std::size_t n = X.rows();
        const std::size_t d = X.cols();

        // Rank the training rows per feature once; each bootstrap's sorted
        // slot order then follows by a stable counting sort over these ranks.
        // Rows with exactly equal feature values end up in base order rather
        // than slot order, which the split search cannot distinguish.
        std::vector<std::vector<std::uint32_t>> base_rank(d, std::vector<std::uint32_t>(n));
        {
            std::vector<std::uint32_t> ord(n);
            for (std::size_t f = 0; f < d; ++f) {
                for (std::size_t i = 0; i < n; ++i) ord[i] = static_cast<std::uint32_t>(i);
                std::stable_sort(ord.begin(), ord.end(), [&](std::uint32_t a, std::uint32_t b) {
                    return X(a, f) < X(b, f);
                });
                for (std::size_t i = 0; i < n; ++i) base_rank[f][ord[i]] = static_cast<std::uint32_t>(i);
            }
        }

        std::vector<std::vector<std::uint32_t>> order(d, std::vector<std::uint32_t>(n));
        std::vector<std::uint32_t> offsets(n + 1);
        trees_.resize(n_trees);
        for (std::size_t t = 0; t < n_trees; ++t) {
            const auto idx = bootstrap_indices(n, derive_seed(seed, 0x7ee5, t));
            for (std::size_t f = 0; f < d; ++f) {
                std::fill(offsets.begin(), offsets.end(), 0);
                for (std::size_t s = 0; s < n; ++s) ++offsets[base_rank[f][idx[s]] + 1];
                for (std::size_t r = 1; r <= n; ++r) offsets[r] += offsets[r - 1];
                for (std::size_t s = 0; s < n; ++s)
                    order[f][offsets[base_rank[f][idx[s]]]++] = static_cast<std::uint32_t>(s);
            }
            trees_[t].fit(X, y, idx, min_leaf, max_depth, true, &order);
        }
    }

    LearnerKind kind() const override { return LearnerKind::quantile_forest; }
    std::size_t dimension() const override { return trees_.front().dimension(); }
    bool supports_quantile(double) const override { return true; }
    bool supports_mean() const override { return true; }

    std::vector<double> predict_mean(const Matrix& X) const override {
        return predict_quantile(X, 0.5);
    }

    std::vector<double> predict_quantile(const Matrix& X, double tau) const override {
        check_tau(tau);
        const double taus[1] = {tau};
        return predict_quantiles(X, taus);
    }

    std::vector<double> predict_quantiles(const Matrix& X,
                                          std::span<const double> taus) const override {
        check_dimension(X);
        for (double tau : taus) check_tau(tau);
        const std::size_t rows = X.rows();
        const std::size_t nt = trees_.size();
        std::vector<double> out(rows * taus.size());
        // Tree-major gather keeps one tree's nodes hot in cache across all
        // rows; the pooled multiset per row is the same either way.
        std::vector<std::span<const double>> hits(rows * nt);
        std::vector<std::size_t> counts(rows, 0);
        for (std::size_t t = 0; t < nt; ++t)
            for (std::size_t i = 0; i < rows; ++i) {
                const auto vals = trees_[t].leaf_targets(X.row(i));
                hits[i * nt + t] = vals;
                counts[i] += vals.size();
            }
        std::vector<double> pool;
        for (std::size_t i = 0; i < rows; ++i) {
            pool.clear();
            pool.reserve(counts[i]);
            for (std::size_t t = 0; t < nt; ++t)
                pool.insert(pool.end(), hits[i * nt + t].begin(), hits[i * nt + t].end());
            if (taus.size() == 1) {
                const std::size_t r = nearest_rank_index(taus[0], pool.size());
                std::nth_element(pool.begin(), pool.begin() + (r - 1), pool.end());
                out[i] = pool[r - 1];
            } else {
                std::sort(pool.begin(), pool.end());
                for (std::size_t t = 0; t < taus.size(); ++t)
                    out[i * taus.size() + t] = pool[nearest_rank_index(taus[t], pool.size()) - 1];
            }
        }
        return out;
    }

private:
    std::vector<RegressionTree> trees_;
};

class KnnQuantileModel final : public FittedModel {
public:
    KnnQuantileModel(const Matrix& X, std::span<const double> y, const Hyper& h)
        : X_(X), y_(y.begin(), y.end()), k_(h.count("k", 10)) {
        check_training_data(X, y, 2);
        if (k_ > X.rows())
            throw std::invalid_argument("knn_quantile: k exceeds the number of training rows");
    }

    LearnerKind kind() const override { return LearnerKind::knn_quantile; }
    std::size_t dimension() const override { return X_.cols(); }
    bool supports_quantile(double) const override { return true; }
    bool supports_mean() const override { return true; }

    std::vector<double> predict_mean(const Matrix& X) const override {
        return predict_quantile(X, 0.5);
    }

    std::vector<double> predict_quantile(const Matrix& X, double tau) const override {
        check_tau(tau);
        const double taus[1] = {tau};
        return predict_quantiles(X, taus);
    }

    std::vector<double> predict_quantiles(const Matrix& X,
                                          std::span<const double> taus) const override {
        check_dimension(X);
        for (double tau : taus) check_tau(tau);
        const std::size_t n = X_.rows();
        std::vector<double> out(X.rows() * taus.size());
        std::vector<std::pair<double, std::size_t>> dist(n);
        std::vector<double> targets(k_);
        for (std::size_t i = 0; i < X.rows(); ++i) {
            const auto q = X.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                const auto r = X_.row(j);
                for (std::size_t f = 0; f < r.size(); ++f) {
                    const double dx = q[f] - r[f];
                    s += dx * dx;
                }
                dist[j] = {s, j};
            }
            std::nth_element(dist.begin(), dist.begin() + (k_ - 1), dist.end());
            for (std::size_t j = 0; j < k_; ++j) targets[j] = y_[dist[j].second];
            std::sort(targets.begin(), targets.end());
            for (std::size_t t = 0; t < taus.size(); ++t)
                out[i * taus.size() + t] = targets[nearest_rank_index(taus[t], k_) - 1];
        }
        return out;
    }

private:
    Matrix X_;
    std::vector<double> y_;
    std::size_t k_;
};

class LinearPinballModel final : public FittedModel {
public:
    LinearPinballModel(const Matrix& X, std::span<const double> y, const Hyper& h)
        : tau_(h.value("tau", 0.5)),
          w_(X.cols(), 0.0) {
        check_training_data(X, y, 2);
        if (!(tau_ > 0.0 && tau_ < 1.0))
            throw std::invalid_argument("linear_pinball: tau must be in (0,1)");
        const std::size_t iterations = h.count("iterations", 5000);
        const double lr = h.value("learning_rate", 1.0);
        if (!(lr > 0.0)) throw std::invalid_argument("linear_pinball: learning_rate must be > 0");

        const std::size_t n = X.rows();
        const std::size_t d = X.cols();
        std::vector<double> w(d, 0.0), gw(d);
        double b = 0.0;

        auto loss_of = [&](const std::vector<double>& ww, double bb) {
            double loss = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double q = bb;
                const auto row = X.row(i);
                for (std::size_t f = 0; f < d; ++f) q += ww[f] * row[f];
                const double u = y[i] - q;
                loss += u * (tau_ - (u < 0.0 ? 1.0 : 0.0));
            }
            return loss / static_cast<double>(n);
        };

        double best_loss = loss_of(w, b);
        for (std::size_t t = 1; t <= iterations; ++t) {
            std::fill(gw.begin(), gw.end(), 0.0);
            double gb = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double q = b;
                const auto row = X.row(i);
                for (std::size_t f = 0; f < d; ++f) q += w[f] * row[f];
                const double g = y[i] > q ? -tau_ : (1.0 - tau_);
                gb += g;
                for (std::size_t f = 0; f < d; ++f) gw[f] += g * row[f];
            }
            const double step = lr / std::sqrt(static_cast<double>(t)) / static_cast<double>(n);
            for (std::size_t f = 0; f < d; ++f) w[f] -= step * gw[f];
            b -= step * gb;
            const double loss = loss_of(w, b);
            if (loss < best_loss) {
                best_loss = loss;
                w_ = w;
                b_ = b;
            }
        }
        training_loss_ = best_loss;
    }

    LearnerKind kind() const override { return LearnerKind::linear_pinball; }
    std::size_t dimension() const override { return w_.size(); }
    bool supports_quantile(double tau) const override { return tau == tau_; }
    bool supports_mean() const override { return tau_ == 0.5; }
    double fitted_tau() const { return tau_; }
    double training_loss() const { return training_loss_; }

    std::vector<double> predict_mean(const Matrix& X) const override {
        if (!supports_mean())
            throw std::invalid_argument("linear_pinball fit at tau != 0.5 has no mean prediction");
        return evaluate(X);
    }

    std::vector<double> predict_quantile(const Matrix& X, double tau) const override {
        check_tau(tau);
        if (tau != tau_)
            throw std::invalid_argument("linear_pinball only supports its fitted tau");
        return evaluate(X);
    }

private:
    std::vector<double> evaluate(const Matrix& X) const {
        check_dimension(X);
        std::vector<double> out(X.rows());
        for (std::size_t i = 0; i < X.rows(); ++i) {
            double q = b_;
            const auto row = X.row(i);
            for (std::size_t f = 0; f < row.size(); ++f) q += w_[f] * row[f];
            out[i] = q;
        }
        return out;
    }

    double tau_;
    std::vector<double> w_;
    double b_ = 0.0;
    double training_loss_ = 0.0;
};

} // namespace detail

// Fit a model of the given spec. The seed only matters for kinds with
// internal randomness (quantile_forest bootstraps).
inline ModelPtr fit(const LearnerSpec& spec, const Matrix& X, std::span<const double> y,
                    std::uint64_t seed) {
    switch (spec.kind) {
        case LearnerKind::regression_tree: {
            detail::Hyper h(spec.hyperparameters, {"min_leaf", "max_depth"});
            return std::make_shared<detail::RegressionTreeModel>(X, y, h);
        }
        case LearnerKind::quantile_forest: {
            detail::Hyper h(spec.hyperparameters, {"trees", "min_leaf", "max_depth"});
            return std::make_shared<detail::QuantileForestModel>(X, y, h, seed);
        }
        case LearnerKind::knn_quantile: {
            detail::Hyper h(spec.hyperparameters, {"k"});
            return std::make_shared<detail::KnnQuantileModel>(X, y, h);
        }
        case LearnerKind::linear_pinball: {
            detail::Hyper h(spec.hyperparameters, {"tau", "iterations", "learning_rate"});
            return std::make_shared<detail::LinearPinballModel>(X, y, h);
        }
    }
    throw std::invalid_argument("fit: unknown learner kind");
}

// Same spec fit at a specific tau: a no-op for kinds whose fitted state does
// not depend on tau, a tau override for linear_pinball.
inline ModelPtr fit_at_tau(const LearnerSpec& spec, double tau, const Matrix& X,
                           std::span<const double> y, std::uint64_t seed) {
    if (spec.kind != LearnerKind::linear_pinball) return fit(spec, X, y, seed);
    LearnerSpec s = spec;
    s.hyperparameters["tau"] = tau;
    return fit(s, X, y, seed);
}

} // namespace clearuq
