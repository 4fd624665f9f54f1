#pragma once

// Experiment orchestration behind the CLI: synthetic replicates, benchmark
// datasets and bring-your-own-components calibration, plus the report writers.
// Everything is deterministic given the config: reruns produce byte-identical
// files.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "clearuq/aleatoric.hpp"
#include "clearuq/clear.hpp"
#include "clearuq/config.hpp"
#include "clearuq/core.hpp"
#include "clearuq/dataset.hpp"
#include "clearuq/epistemic.hpp"
#include "clearuq/io.hpp"
#include "clearuq/learners.hpp"
#include "clearuq/metrics.hpp"
#include "clearuq/parallel.hpp"
#include "clearuq/quantiles.hpp"
#include "clearuq/random.hpp"
#include "clearuq/synthetic.hpp"

namespace clearuq {

// Report row order is fixed so reruns are byte-identical.
inline const std::array<std::string, 7>& method_names() {
    static const std::array<std::string, 7> names = {
        "CLEAR", "CLEAR-LAMBDA1", "CLEAR-GAMMA1", "ALEATORIC",
        "ALEATORIC-R", "PCS-EPISTEMIC", "NAIVE"};
    return names;
}

struct MetricsRow {
    std::string dataset;
    std::string method;
    std::uint64_t seed = 0;
    double alpha = 0.0;
    MetricsReport report;
};

struct ConditionalRow {
    std::string method;
    double radius = 0.0;
    double coverage = 0.0;
    double mean_width = 0.0;
};

struct FitRecord {
    std::string dataset;
    std::uint64_t seed = 0;
    ClearFit fit;
    // Validation quantile loss of the fixed lambda=1 variant on the same
    // rows; the grid always contains 1, so fit.val_quantile_loss can exceed
    // this only by the argmin tie tolerance.
    double lambda1_val_quantile_loss = std::numeric_limits<double>::quiet_NaN();
};

struct RunResult {
    std::vector<MetricsRow> metrics;
    std::vector<ConditionalRow> conditional; // simulate only
    std::vector<FitRecord> fits;
    std::vector<std::string> failures; // benchmark cells that errored
};

namespace detail {

// nciw needs the center inside every interval; ALEATORIC's independent curve
// fits cannot guarantee that, so those two columns degrade to nan instead of
// failing the cell.
inline MetricsReport safe_evaluate(const IntervalSet& iv, std::span<const double> f_hat,
                                   std::span<const double> y, double alpha) {
    MetricsReport r;
    r.picp = picp(iv, y);
    r.niw = niw(iv, y);
    r.aisl = aisl(iv, y, alpha);
    r.quantile_loss = quantile_loss_of_intervals(iv, y, alpha);
    bool centered = true;
    for (std::size_t i = 0; i < f_hat.size() && centered; ++i)
        centered = iv.lower[i] <= f_hat[i] && f_hat[i] <= iv.upper[i];
    if (centered) {
        const NciwResult nr = nciw(iv, f_hat, y, alpha);
        r.nciw = nr.nciw;
        r.c_test_cal = nr.c_test_cal;
    } else {
        r.nciw = std::numeric_limits<double>::quiet_NaN();
        r.c_test_cal = std::numeric_limits<double>::quiet_NaN();
    }
    return r;
}

inline IntervalSet slice_intervals(const IntervalSet& iv, std::size_t begin, std::size_t count) {
    IntervalSet out;
    out.lower.assign(iv.lower.begin() + begin, iv.lower.begin() + begin + count);
    out.upper.assign(iv.upper.begin() + begin, iv.upper.begin() + begin + count);
    return out;
}

inline Matrix vstack(const std::vector<const Matrix*>& parts) {
    std::size_t rows = 0;
    const std::size_t cols = parts.front()->cols();
    for (const Matrix* p : parts) rows += p->rows();
    Matrix out(rows, cols);
    std::size_t r = 0;
    for (const Matrix* p : parts) {
        for (std::size_t i = 0; i < p->rows(); ++i, ++r)
            for (std::size_t j = 0; j < cols; ++j) out(r, j) = (*p)(i, j);
    }
    return out;
}

// Everything fitted for one (train, cal) pair, with per-method intervals on
// the eval rows. The cal rows serve as both the selection validation set and
// the conformal calibration set.
struct FittedCell {
    std::vector<IntervalSet> intervals; // parallel to method_names()
    std::vector<double> f_hat_eval;
    ClearFit clear_fit;
    double lambda1_val_quantile_loss = std::numeric_limits<double>::quiet_NaN();
};

inline FittedCell fit_cell(const ExperimentConfig& cfg, const Matrix& X_train,
                           std::span<const double> y_train, const Matrix& X_cal,
                           std::span<const double> y_cal, const Matrix& X_eval,
                           std::uint64_t seed) {
    // Rank the full pool once; the top k feed the ensemble and the best
    // quantile-capable entry doubles as the aleatoric learner unless the
    // config pins one.
    const auto ranked =
        select_top_k(cfg.pool, X_train, y_train, X_cal, y_cal, cfg.pool.size(), seed);
    std::vector<LearnerSpec> selected;
    for (std::size_t i = 0; i < cfg.top_k; ++i) selected.push_back(ranked[i].spec);

    LearnerSpec ale_spec;
    if (cfg.aleatoric_learner_set) {
        ale_spec = cfg.aleatoric_learner;
    } else {
        bool found = false;
        for (const RankedSpec& r : ranked) {
            if (kind_supports_any_quantile(r.spec.kind) ||
                r.spec.kind == LearnerKind::linear_pinball) {
                ale_spec = r.spec;
                found = true;
                break;
            }
        }
        if (!found)
            throw std::runtime_error(
                "no quantile-capable learner in the pool; set aleatoric.learner");
    }

    const PcsEnsemble ens =
        build_ensemble(selected, X_train, y_train, cfg.ensemble_size, seed, 1);
    const EpistemicBand band_train = epistemic_band(ens, X_train, cfg.alpha);
    const EpistemicBand band_cal = epistemic_band(ens, X_cal, cfg.alpha);
    const EpistemicBand band_eval = epistemic_band(ens, X_eval, cfg.alpha);

    const ResidualQuantileTrio trio(X_train, y_train, band_train.f_hat, ale_spec, cfg.alpha,
                                    cfg.aleatoric_bags, seed, 1);
    const auto curves_cal = trio.predict(X_cal);
    const auto curves_eval = trio.predict(X_eval);

    auto band_widths = [](const ResidualQuantileTrio::Curves& c, std::vector<double>& lo,
                          std::vector<double>& hi) {
        lo.resize(c.mid.size());
        hi.resize(c.mid.size());
        for (std::size_t i = 0; i < c.mid.size(); ++i) {
            lo[i] = std::max(c.mid[i] - c.lo[i], 0.0);
            hi[i] = std::max(c.hi[i] - c.mid[i], 0.0);
        }
    };

    UncertaintyComponents comp_cal;
    comp_cal.f_hat = band_cal.f_hat;
    comp_cal.epi_lo = band_cal.lo_width;
    comp_cal.epi_hi = band_cal.hi_width;
    band_widths(curves_cal, comp_cal.ale_lo, comp_cal.ale_hi);
    comp_cal.y.assign(y_cal.begin(), y_cal.end());

    UncertaintyComponents comp_eval;
    comp_eval.f_hat = band_eval.f_hat;
    comp_eval.epi_lo = band_eval.lo_width;
    comp_eval.epi_hi = band_eval.hi_width;
    band_widths(curves_eval, comp_eval.ale_lo, comp_eval.ale_hi);

    const LambdaGrid grid =
        cfg.lambda_grid.empty() ? default_lambda_grid() : LambdaGrid{cfg.lambda_grid};
    ClearOptions opt;
    opt.mode = cfg.clear_mode;
    opt.conformal_fraction = cfg.conformal_fraction;
    opt.seed = seed;
    opt.threads = 1;

    FittedCell out;
    out.clear_fit = fit_clear(comp_cal, grid, cfg.alpha, opt);
    const ClearFit fit_l1 = fixed_variant(comp_cal, cfg.alpha, FixedVariant::lambda_equals_1);
    out.lambda1_val_quantile_loss = fit_l1.val_quantile_loss;
    const ClearFit fit_g1 = fixed_variant(comp_cal, cfg.alpha, FixedVariant::gamma1_equals_1);
    const double naive_r = naive_baseline(band_cal.f_hat, y_cal, cfg.alpha);
    const double pcs_gamma = calibrate_pcs_multiplicative(band_cal, y_cal, cfg.alpha);

    // ALEATORIC-R reuses the trio curves: same learner, same resamples, same
    // fit seeds as a residual-mode CQR refit, minus the redundant fitting.
    std::vector<double> r_lo_cal(curves_cal.lo.size()), r_hi_cal(curves_cal.lo.size());
    for (std::size_t i = 0; i < r_lo_cal.size(); ++i) {
        r_lo_cal[i] = curves_cal.lo[i] + band_cal.f_hat[i];
        r_hi_cal[i] = curves_cal.hi[i] + band_cal.f_hat[i];
    }
    const double gamma_r = cqr_additive_gamma(r_lo_cal, r_hi_cal, y_cal, cfg.alpha);

    out.intervals.resize(method_names().size());
    out.intervals[0] = calibrated_interval(comp_eval, out.clear_fit.lambda_star, out.clear_fit.gamma1);
    out.intervals[1] = calibrated_interval(comp_eval, 1.0, fit_l1.gamma1);
    out.intervals[2] = calibrated_interval(comp_eval, fit_g1.lambda_star, 1.0);
    out.intervals[3] = cqr_baseline(X_train, y_train, X_cal, y_cal, X_eval, ale_spec, cfg.alpha,
                                    CqrMode::on_targets, {}, {}, {}, cfg.aleatoric_bags, seed, 1)
                           .test_intervals;

    IntervalSet ale_r;
    ale_r.lower.resize(X_eval.rows());
    ale_r.upper.resize(X_eval.rows());
    for (std::size_t i = 0; i < X_eval.rows(); ++i) {
        ale_r.lower[i] = band_eval.f_hat[i] + curves_eval.lo[i] - gamma_r;
        ale_r.upper[i] = band_eval.f_hat[i] + curves_eval.hi[i] + gamma_r;
    }
    out.intervals[4] = std::move(ale_r);
    out.intervals[5] = pcs_intervals(band_eval, pcs_gamma);

    IntervalSet naive;
    naive.lower.resize(X_eval.rows());
    naive.upper.resize(X_eval.rows());
    for (std::size_t i = 0; i < X_eval.rows(); ++i) {
        naive.lower[i] = band_eval.f_hat[i] - naive_r;
        naive.upper[i] = band_eval.f_hat[i] + naive_r;
    }
    out.intervals[6] = std::move(naive);

    out.f_hat_eval = band_eval.f_hat;
    return out;
}

struct SimulateCell {
    std::vector<MetricsRow> rows;
    FitRecord fit;
    // Indexed [method][radius]; methods = method_names() plus a trailing
    // ORACLE entry.
    std::vector<std::vector<double>> cond_coverage;
    std::vector<std::vector<double>> cond_width;
};

inline SimulateCell run_simulate_cell(const ExperimentConfig& cfg, std::size_t rep,
                                      std::uint64_t seed) {
    const auto& sc = cfg.synthetic;
    const std::size_t d = sc.d_per_replicate[rep % sc.d_per_replicate.size()];
    SyntheticSpec spec;
    spec.d = d;
    spec.noise = sc.noise;
    spec.betas = draw_coefficients(d, seed);

    const std::string dataset_name =
        "synthetic-d" + std::to_string(d) + "-" + to_string(sc.noise);

    const Dataset pool_data = generate_dataset(spec, sc.n, derive_seed(seed, 0xa110));
    const Dataset fresh = generate_dataset(spec, sc.marginal_test_size, derive_seed(seed, 0xa111));
    const SplitIndices si = split_indices(pool_data.n(), cfg.split, seed);

    const Matrix X_train = pool_data.features.take_rows(si.train);
    const std::vector<double> y_train = take(pool_data.target, si.train);
    const Matrix X_cal = pool_data.features.take_rows(si.cal);
    const std::vector<double> y_cal = take(pool_data.target, si.cal);

    // One eval matrix: fresh marginal rows first, then every radius shell.
    std::vector<Matrix> shells;
    shells.reserve(sc.radii.size());
    for (std::size_t ri = 0; ri < sc.radii.size(); ++ri)
        shells.push_back(sphere_test_points(d, sc.radii[ri], sc.sphere_points_per_radius,
                                            derive_seed(seed, 0x5fe2, ri)));
    std::vector<const Matrix*> parts = {&fresh.features};
    for (const Matrix& s : shells) parts.push_back(&s);
    const Matrix X_eval = vstack(parts);

    const FittedCell fc = fit_cell(cfg, X_train, y_train, X_cal, y_cal, X_eval, seed);

    SimulateCell out;
    out.fit = FitRecord{dataset_name, seed, fc.clear_fit, fc.lambda1_val_quantile_loss};

    const std::size_t n_marginal = fresh.n();
    const std::span<const double> f_hat_marginal(fc.f_hat_eval.data(), n_marginal);
    for (std::size_t m = 0; m < method_names().size(); ++m) {
        MetricsRow row;
        row.dataset = dataset_name;
        row.method = method_names()[m];
        row.seed = seed;
        row.alpha = cfg.alpha;
        row.report = safe_evaluate(slice_intervals(fc.intervals[m], 0, n_marginal),
                                   f_hat_marginal, fresh.target, cfg.alpha);
        out.rows.push_back(std::move(row));
    }

    // Conditional coverage on the shells against fresh noise draws; the
    // oracle interval rides along as an extra method.
    const std::size_t n_methods = method_names().size();
    out.cond_coverage.assign(n_methods + 1, std::vector<double>(sc.radii.size(), 0.0));
    out.cond_width = out.cond_coverage;
    for (std::size_t ri = 0; ri < sc.radii.size(); ++ri) {
        const Matrix& shell = shells[ri];
        const std::size_t m_pts = shell.rows();
        const std::size_t base = n_marginal + ri * sc.sphere_points_per_radius;

        Rng noise_rng(derive_seed(seed, 0xcead, ri));
        std::vector<double> y_shell(m_pts);
        for (std::size_t i = 0; i < m_pts; ++i) {
            const auto x = shell.row(i);
            y_shell[i] = mean_function(spec, x) + noise_sigma(spec, x) * noise_rng.normal();
        }

        for (std::size_t m = 0; m < n_methods; ++m) {
            const IntervalSet& iv = fc.intervals[m];
            double covered = 0.0, width = 0.0;
            for (std::size_t i = 0; i < m_pts; ++i) {
                const double lo = iv.lower[base + i], hi = iv.upper[base + i];
                covered += (y_shell[i] >= lo && y_shell[i] <= hi) ? 1.0 : 0.0;
                width += hi - lo;
            }
            out.cond_coverage[m][ri] = covered / static_cast<double>(m_pts);
            out.cond_width[m][ri] = width / static_cast<double>(m_pts);
        }
        double covered = 0.0, width = 0.0;
        for (std::size_t i = 0; i < m_pts; ++i) {
            const auto [lo, hi] = oracle_interval(spec, shell.row(i), cfg.alpha);
            covered += (y_shell[i] >= lo && y_shell[i] <= hi) ? 1.0 : 0.0;
            width += hi - lo;
        }
        out.cond_coverage[n_methods][ri] = covered / static_cast<double>(m_pts);
        out.cond_width[n_methods][ri] = width / static_cast<double>(m_pts);
    }
    return out;
}

} // namespace detail

inline RunResult run_simulate(const ExperimentConfig& cfg) {
    std::vector<detail::SimulateCell> cells(cfg.seeds.size());
    parallel_for(cfg.seeds.size(), static_cast<unsigned>(cfg.threads), [&](std::size_t i) {
        cells[i] = detail::run_simulate_cell(cfg, i, cfg.seeds[i]);
    });

    RunResult out;
    for (detail::SimulateCell& c : cells) {
        for (MetricsRow& r : c.rows) out.metrics.push_back(std::move(r));
        out.fits.push_back(std::move(c.fit));
    }

    const std::size_t n_methods = method_names().size();
    const double reps = static_cast<double>(cells.size());
    for (std::size_t m = 0; m <= n_methods; ++m) {
        const std::string name = m < n_methods ? method_names()[m] : "ORACLE";
        for (std::size_t ri = 0; ri < cfg.synthetic.radii.size(); ++ri) {
            double cov = 0.0, width = 0.0;
            for (const detail::SimulateCell& c : cells) {
                cov += c.cond_coverage[m][ri];
                width += c.cond_width[m][ri];
            }
            out.conditional.push_back(
                ConditionalRow{name, cfg.synthetic.radii[ri], cov / reps, width / reps});
        }
    }
    return out;
}

inline RunResult run_benchmark(const ExperimentConfig& cfg) {
    struct Prepared {
        Dataset data;
        std::string error;
    };
    std::vector<Prepared> prepared(cfg.datasets.size());
    for (std::size_t i = 0; i < cfg.datasets.size(); ++i) {
        try {
            Dataset raw = load_csv(cfg.datasets[i].path, cfg.datasets[i].target);
            prepared[i].data = encode_all_categoricals(raw);
        } catch (const std::exception& e) {
            prepared[i].error = e.what();
        }
    }

    struct Cell {
        std::size_t ds = 0;
        std::uint64_t seed = 0;
        std::vector<MetricsRow> rows;
        FitRecord fit;
        bool ok = false;
        std::string error;
    };
    std::vector<Cell> cells;
    for (std::size_t i = 0; i < cfg.datasets.size(); ++i)
        for (std::uint64_t seed : cfg.seeds) cells.push_back(Cell{i, seed, {}, {}, false, ""});

    // Cells are isolated: one bad dataset/seed pair reports an error row
    // instead of sinking the whole run.
    parallel_for(cells.size(), static_cast<unsigned>(cfg.threads), [&](std::size_t ci) {
        Cell& cell = cells[ci];
        const DatasetRef& ref = cfg.datasets[cell.ds];
        try {
            if (!prepared[cell.ds].error.empty())
                throw std::runtime_error(prepared[cell.ds].error);
            const Dataset& data = prepared[cell.ds].data;

            const SplitIndices si = split_indices(data.n(), cfg.split, cell.seed);
            if (si.test.empty())
                throw std::runtime_error("benchmark split has no test rows; raise split.test");
            const Matrix X_train = data.features.take_rows(si.train);
            const std::vector<double> y_train = take(data.target, si.train);
            const Matrix X_cal = data.features.take_rows(si.cal);
            const std::vector<double> y_cal = take(data.target, si.cal);
            const Matrix X_test = data.features.take_rows(si.test);
            const std::vector<double> y_test = take(data.target, si.test);

            const detail::FittedCell fc =
                detail::fit_cell(cfg, X_train, y_train, X_cal, y_cal, X_test, cell.seed);

            for (std::size_t m = 0; m < method_names().size(); ++m) {
                MetricsRow row;
                row.dataset = ref.name;
                row.method = method_names()[m];
                row.seed = cell.seed;
                row.alpha = cfg.alpha;
                row.report =
                    detail::safe_evaluate(fc.intervals[m], fc.f_hat_eval, y_test, cfg.alpha);
                cell.rows.push_back(std::move(row));
            }
            cell.fit = FitRecord{ref.name, cell.seed, fc.clear_fit, fc.lambda1_val_quantile_loss};
            cell.ok = true;
        } catch (const std::exception& e) {
            cell.error = ref.name + " seed " + std::to_string(cell.seed) + ": " + e.what();
        }
    });

    RunResult out;
    for (Cell& cell : cells) {
        if (!cell.ok) {
            out.failures.push_back(std::move(cell.error));
            continue;
        }
        for (MetricsRow& r : cell.rows) out.metrics.push_back(std::move(r));
        out.fits.push_back(std::move(cell.fit));
    }
    return out;
}

struct CalibrateResult {
    ClearFit fit;
    IntervalSet intervals;
    std::string dataset;
    double lambda1_val_quantile_loss = std::numeric_limits<double>::quiet_NaN();
};

inline CalibrateResult run_calibrate(const ExperimentConfig& cfg) {
    const UncertaintyComponents cal = read_components_csv(cfg.calibration_csv, true);
    const LambdaGrid grid =
        cfg.lambda_grid.empty() ? default_lambda_grid() : LambdaGrid{cfg.lambda_grid};
    ClearOptions opt;
    opt.mode = cfg.clear_mode;
    opt.conformal_fraction = cfg.conformal_fraction;
    opt.seed = cfg.seeds.front();
    opt.threads = static_cast<unsigned>(cfg.threads);

    CalibrateResult out;
    out.dataset = detail::file_stem(cfg.calibration_csv);
    out.fit = fit_clear(cal, grid, cfg.alpha, opt);
    out.lambda1_val_quantile_loss =
        fixed_variant(cal, cfg.alpha, FixedVariant::lambda_equals_1).val_quantile_loss;
    const UncertaintyComponents target =
        cfg.test_csv.empty() ? cal : read_components_csv(cfg.test_csv, false);
    out.intervals = calibrated_interval(target, out.fit.lambda_star, out.fit.gamma1);
    return out;
}

// ---- report writers ----

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out = detail::open_out(path);
    out << "dataset,method,seed,alpha,picp,niw,nciw,c_test_cal,aisl,quantile_loss\n";
    for (const MetricsRow& r : rows) {
        out << r.dataset << ',' << r.method << ',' << r.seed << ',' << format_number(r.alpha)
            << ',' << format_number(r.report.picp) << ',' << format_number(r.report.niw) << ','
            << format_number(r.report.nciw) << ',' << format_number(r.report.c_test_cal) << ','
            << format_number(r.report.aisl) << ',' << format_number(r.report.quantile_loss)
            << "\n";
    }
}

inline void write_conditional_csv(const std::string& path,
                                  const std::vector<ConditionalRow>& rows) {
    std::ofstream out = detail::open_out(path);
    out << "method,radius,coverage,mean_width\n";
    for (const ConditionalRow& r : rows) {
        out << r.method << ',' << format_number(r.radius) << ',' << format_number(r.coverage)
            << ',' << format_number(r.mean_width) << "\n";
    }
}

inline nlohmann::json fit_record_json(const FitRecord& rec) {
    auto num = [](double v) -> nlohmann::json {
        if (std::isfinite(v)) return v;
        if (std::isnan(v)) return "NaN";
        return v > 0 ? "Infinity" : "-Infinity";
    };
    nlohmann::json j;
    j["dataset"] = rec.dataset;
    j["seed"] = rec.seed;
    j["alpha"] = num(rec.fit.alpha);
    j["lambda_star"] = num(rec.fit.lambda_star);
    j["gamma1"] = num(rec.fit.gamma1);
    j["gamma2"] = num(rec.fit.gamma2);
    j["grid_size"] = rec.fit.grid_size;
    j["val_quantile_loss"] = num(rec.fit.val_quantile_loss);
    j["lambda1_val_quantile_loss"] = num(rec.lambda1_val_quantile_loss);
    return j;
}

inline void write_fits_jsonl(const std::string& path, const std::vector<FitRecord>& records) {
    std::ofstream out = detail::open_out(path);
    for (const FitRecord& rec : records) out << fit_record_json(rec).dump() << "\n";
}

} // namespace clearuq
