#pragma once

// CART regression tree (exact greedy splits on squared error). Used directly
// by the regression_tree learner and as the base tree of quantile_forest,
// which pools leaf target values across trees.
//
// Fitting presorts each feature once and keeps the per-feature orderings
// partitioned along the recursion, so a fit costs O(d * n * depth) after the
// initial sort. Everything is deterministic: ties in the split search resolve
// to the lowest feature index, then the lowest threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "clearuq/core.hpp"

namespace clearuq {

class RegressionTree {
public:
    // `sample` holds row indices into X/y (duplicates allowed, e.g. a
    // bootstrap resample). When store_values is true each leaf keeps the
    // target values that landed in it, enabling pooled-quantile prediction.
    // `presorted`, when given, supplies the per-feature slot orderings (slot s
    // is sample[s]); callers that fit many resamples of the same rows can
    // build these by counting sort over cached base ranks.
    void fit(const Matrix& X, std::span<const double> y, std::span<const std::size_t> sample,
             std::size_t min_leaf, int max_depth, bool store_values,
             const std::vector<std::vector<std::uint32_t>>* presorted = nullptr) {
        if (sample.empty()) throw std::invalid_argument("RegressionTree: empty sample");
        if (min_leaf < 1) throw std::invalid_argument("RegressionTree: min_leaf must be >= 1");
        d_ = X.cols();
        const std::size_t n = sample.size();

        // Column-major copy of the sampled rows; slot s is sample[s].
        std::vector<std::vector<double>> feats(d_, std::vector<double>(n));
        for (std::size_t f = 0; f < d_; ++f)
            for (std::size_t s = 0; s < n; ++s) feats[f][s] = X(sample[s], f);
        std::vector<double> ys(n);
        for (std::size_t s = 0; s < n; ++s) ys[s] = y[sample[s]];

        std::vector<std::vector<std::uint32_t>> order;
        if (presorted) {
            order = *presorted;
        } else {
            order.assign(d_, std::vector<std::uint32_t>(n));
            for (std::size_t f = 0; f < d_; ++f) {
                auto& ord = order[f];
                for (std::size_t s = 0; s < n; ++s) ord[s] = static_cast<std::uint32_t>(s);
                std::stable_sort(ord.begin(), ord.end(), [&](std::uint32_t a, std::uint32_t b) {
                    return feats[f][a] < feats[f][b];
                });
            }
        }

        nodes_.clear();
        leaf_values_.clear();
        std::vector<std::uint8_t> goes_left(n);
        std::vector<std::uint32_t> scratch(n);

        struct Frame {
            std::size_t node, begin, end;
            int depth;
        };
        nodes_.emplace_back();
        std::vector<Frame> stack{{0, 0, n, 0}};

        while (!stack.empty()) {
            const Frame fr = stack.back();
            stack.pop_back();
            Node& node = nodes_[fr.node];
            const std::size_t count = fr.end - fr.begin;

            double sum = 0.0;
            for (std::size_t p = fr.begin; p < fr.end; ++p) sum += ys[order[0][p]];
            const double mean = sum / static_cast<double>(count);

            bool constant = true;
            for (std::size_t p = fr.begin; p < fr.end && constant; ++p)
                constant = ys[order[0][p]] == ys[order[0][fr.begin]];

            const bool depth_stop = max_depth >= 0 && fr.depth >= max_depth;
            if (count < 2 * min_leaf || depth_stop || constant) {
                make_leaf(node, mean, fr.begin, fr.end, order[0], ys, store_values);
                continue;
            }

            // Best split: maximize S_L^2/n_L + S_R^2/n_R over boundaries
            // between distinct feature values with min_leaf on both sides.
            double best_gain = -std::numeric_limits<double>::infinity();
            std::size_t best_f = 0, best_left = 0;
            double best_threshold = 0.0;
            for (std::size_t f = 0; f < d_; ++f) {
                const auto& ord = order[f];
                const auto& fv = feats[f];
                double left_sum = 0.0;
                for (std::size_t p = fr.begin; p + 1 < fr.end; ++p) {
                    left_sum += ys[ord[p]];
                    const double v = fv[ord[p]];
                    const double v_next = fv[ord[p + 1]];
                    if (v == v_next) continue;
                    const std::size_t n_left = p + 1 - fr.begin;
                    const std::size_t n_right = count - n_left;
                    if (n_left < min_leaf || n_right < min_leaf) continue;
                    const double right_sum = sum - left_sum;
                    const double gain = left_sum * left_sum / static_cast<double>(n_left) +
                                        right_sum * right_sum / static_cast<double>(n_right);
                    if (gain > best_gain) {
                        best_gain = gain;
                        best_f = f;
                        double t = 0.5 * (v + v_next);
                        if (t >= v_next) t = v; // midpoint rounded up; keep partition exact
                        best_threshold = t;
                        best_left = n_left;
                    }
                }
            }

            if (!std::isfinite(best_gain)) {
                make_leaf(node, mean, fr.begin, fr.end, order[0], ys, store_values);
                continue;
            }

            for (std::size_t p = fr.begin; p < fr.end; ++p) {
                const std::uint32_t s = order[best_f][p];
                goes_left[s] = feats[best_f][s] <= best_threshold ? 1 : 0;
            }
            for (std::size_t f = 0; f < d_; ++f) {
                auto& ord = order[f];
                std::size_t lo = fr.begin, hi = fr.begin + best_left;
                for (std::size_t p = fr.begin; p < fr.end; ++p) {
                    const std::uint32_t s = ord[p];
                    scratch[goes_left[s] ? lo++ : hi++] = s;
                }
                std::copy(scratch.begin() + fr.begin, scratch.begin() + fr.end,
                          ord.begin() + fr.begin);
            }

            node.feature = static_cast<std::int32_t>(best_f);
            node.threshold = best_threshold;
            node.left = static_cast<std::int32_t>(nodes_.size());
            node.right = node.left + 1;
            nodes_.emplace_back();
            nodes_.emplace_back();
            const std::size_t left_id = static_cast<std::size_t>(nodes_[fr.node].left);
            stack.push_back({left_id + 1, fr.begin + best_left, fr.end, fr.depth + 1});
            stack.push_back({left_id, fr.begin, fr.begin + best_left, fr.depth + 1});
        }
    }

    std::size_t dimension() const { return d_; }

    double predict_mean(std::span<const double> x) const {
        return nodes_[descend(x)].leaf_mean;
    }

    // Targets pooled in the leaf x falls into (empty unless store_values).
    std::span<const double> leaf_targets(std::span<const double> x) const {
        const Node& leaf = nodes_[descend(x)];
        return {leaf_values_.data() + leaf.val_offset, static_cast<std::size_t>(leaf.val_count)};
    }

private:
    struct Node {
        std::int32_t feature = -1; // -1 marks a leaf
        double threshold = 0.0;
        std::int32_t left = -1, right = -1;
        double leaf_mean = 0.0;
        std::int32_t val_offset = 0, val_count = 0;
    };

    std::size_t descend(std::span<const double> x) const {
        std::size_t i = 0;
        while (nodes_[i].feature >= 0) {
            const Node& nd = nodes_[i];
            i = static_cast<std::size_t>(x[static_cast<std::size_t>(nd.feature)] <= nd.threshold
                                             ? nd.left
                                             : nd.right);
        }
        return i;
    }

    void make_leaf(Node& node, double mean, std::size_t begin, std::size_t end,
                   const std::vector<std::uint32_t>& ord, const std::vector<double>& ys,
                   bool store_values) {
        node.feature = -1;
        node.leaf_mean = mean;
        if (store_values) {
            node.val_offset = static_cast<std::int32_t>(leaf_values_.size());
            node.val_count = static_cast<std::int32_t>(end - begin);
            for (std::size_t p = begin; p < end; ++p) leaf_values_.push_back(ys[ord[p]]);
        }
    }

    std::vector<Node> nodes_;
    std::vector<double> leaf_values_;
    std::size_t d_ = 0;
};

} // namespace clearuq
