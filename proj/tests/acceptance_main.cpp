// End-to-end acceptance checks. Each numbered line prints PASS or FAIL with
// the pinned tolerance; exit code is nonzero if any line fails. Run from the
// repository root (or pass it as argv[1]) so the config paths resolve.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "clearuq/runner.hpp"

using namespace clearuq;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int num, const std::string& what, bool ok, const std::string& detail) {
    std::printf("[%d] %-34s %s  (%s)\n", num, what.c_str(), ok ? "PASS" : "FAIL", detail.c_str());
    if (!ok) ++g_failures;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double mean_picp(const RunResult& res, const std::string& method) {
    double s = 0.0;
    std::size_t n = 0;
    for (const MetricsRow& r : res.metrics)
        if (r.method == method) { s += r.report.picp; ++n; }
    return s / static_cast<double>(n);
}

double cond_coverage_at(const RunResult& res, const std::string& method, double radius) {
    for (const ConditionalRow& r : res.conditional)
        if (r.method == method && r.radius == radius) return r.coverage;
    return std::numeric_limits<double>::quiet_NaN();
}

// Smallest score whose left-closed coverage count reaches the conformal rank,
// walked over the sorted score set; the 1e-9 slack guards the ceiling against
// float error when (1-alpha)(n+1) is mathematically an integer.
double brute_force_quantile(std::vector<double> scores, double alpha) {
    std::sort(scores.begin(), scores.end());
    const std::size_t n = scores.size();
    const double raw = (1.0 - alpha) * static_cast<double>(n + 1);
    const std::size_t rank = static_cast<std::size_t>(std::ceil(raw - 1e-9));
    if (rank > n) return scores.back();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t count =
            static_cast<std::size_t>(std::upper_bound(scores.begin(), scores.end(), scores[i]) -
                                     scores.begin());
        if (count >= rank) return scores[i];
    }
    return scores.back();
}

UncertaintyComponents random_components(Rng& rng, std::size_t n, bool with_y) {
    UncertaintyComponents c;
    c.f_hat.resize(n);
    c.ale_lo.resize(n);
    c.ale_hi.resize(n);
    c.epi_lo.resize(n);
    c.epi_hi.resize(n);
    if (with_y) c.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        c.f_hat[i] = rng.normal();
        c.ale_lo[i] = std::abs(rng.normal()) + 0.05;
        c.ale_hi[i] = std::abs(rng.normal()) + 0.05;
        c.epi_lo[i] = std::abs(rng.normal()) * 0.7;
        c.epi_hi[i] = std::abs(rng.normal()) * 0.7;
        if (with_y) c.y[i] = c.f_hat[i] + rng.normal() * 1.5;
    }
    return c;
}

} // namespace

int main(int argc, char** argv) {
    if (argc > 1) fs::current_path(argv[1]);
    const fs::path scratch = fs::temp_directory_path() / "clearuq-acceptance";
    fs::remove_all(scratch);
    fs::create_directories(scratch);

    // Criteria 1, 2, 5 and 9 all read the simulate config; run it twice up
    // front and keep both metric files for the determinism comparison.
    const ExperimentConfig sim_cfg =
        parse_config(load_config_json("configs/simulate.json"), RunMode::simulate);
    auto t0 = std::chrono::steady_clock::now();
    const RunResult sim1 = run_simulate(sim_cfg);
    const double sim_seconds = elapsed_s(t0);
    const RunResult sim2 = run_simulate(sim_cfg);
    write_metrics_csv((scratch / "metrics1.csv").string(), sim1.metrics);
    write_metrics_csv((scratch / "metrics2.csv").string(), sim2.metrics);

    // 1. Marginal coverage on the synthetic runs plus the runtime budget.
    {
        const double p = mean_picp(sim1, "CLEAR");
        const bool ok = p >= 0.88 && p <= 0.92 && sim_seconds <= 600.0;
        report(1, "simulate marginal coverage", ok,
               "mean CLEAR PICP " + fmt(p) + " in [0.88, 0.92], " + fmt(sim_seconds) +
                   " s <= 600 s, " + std::to_string(sim_cfg.seeds.size()) + " replicates");
    }

    // 2. Conditional coverage in the extrapolation region, averaged curve.
    {
        const double clear4 = cond_coverage_at(sim1, "CLEAR", 4.0);
        const double aler4 = cond_coverage_at(sim1, "ALEATORIC-R", 4.0);
        const bool ok = clear4 >= 0.85 && aler4 < clear4;
        report(2, "conditional coverage at r=4", ok,
               "CLEAR " + fmt(clear4) + " >= 0.85, ALEATORIC-R " + fmt(aler4) + " strictly below");
    }

    // 3. Conformal quantile equals a brute-force scan of the score set.
    {
        t0 = std::chrono::steady_clock::now();
        int mismatches = 0;
        Rng rng(derive_seed(20260815, 3));
        for (int t = 0; t < 200; ++t) {
            const std::size_t n = 1 + rng.uniform_below(200);
            std::vector<double> scores(n);
            for (double& s : scores) {
                s = rng.normal() * 2.0;
                if (rng.uniform01() < 0.3) s = std::round(s * 10.0) / 10.0; // force ties
            }
            const double alphas[] = {0.05, 0.1, 0.2, 1.0 / 3.0, 0.02 + 0.48 * rng.uniform01()};
            const double alpha = alphas[t % 5];
            const double got = gamma1_for_lambda(scores, alpha, OverflowMode::largest_score);
            if (got != brute_force_quantile(scores, alpha)) ++mismatches;
        }
        const double secs = elapsed_s(t0);
        report(3, "conformal quantile vs brute force", mismatches == 0 && secs <= 5.0,
               std::to_string(mismatches) + " mismatches in 200 instances, n <= 200, " + fmt(secs) +
                   " s <= 5 s");
    }

    // 4. Split mode keeps the marginal guarantee on exchangeable draws.
    {
        t0 = std::chrono::steady_clock::now();
        const int reps = 1000;
        const double alpha = 0.1;
        int covered = 0;
        LambdaGrid grid{{0.0, 0.5, 1.0, 2.0}};
        for (int r = 0; r < reps; ++r) {
            Rng rng(derive_seed(20260815, 4, static_cast<std::uint64_t>(r)));
            UncertaintyComponents rows = random_components(rng, 61, true);
            std::vector<std::size_t> cal_idx(60);
            for (std::size_t i = 0; i < 60; ++i) cal_idx[i] = i;
            UncertaintyComponents cal = rows.take(cal_idx);
            ClearOptions opts;
            opts.mode = ClearMode::conformalized;
            opts.seed = derive_seed(20260815, 4, static_cast<std::uint64_t>(r), 1);
            const ClearFit fit = fit_clear(cal, grid, alpha, opts);
            const std::vector<std::size_t> test_idx = {60};
            UncertaintyComponents test = rows.take(test_idx);
            const IntervalSet iv = calibrated_interval(test, fit.lambda_star, fit.gamma1);
            if (rows.y[60] >= iv.lower[0] && rows.y[60] <= iv.upper[0]) ++covered;
        }
        const double rate = covered / static_cast<double>(reps);
        const double bound = 1.0 - alpha - 3.0 * std::sqrt(alpha * (1.0 - alpha) / reps);
        const double secs = elapsed_s(t0);
        report(4, "split-mode coverage guarantee", rate >= bound && secs <= 300.0,
               "coverage " + fmt(rate) + " >= " + fmt(bound) + " over 1000 replications, " +
                   fmt(secs) + " s <= 300 s");
    }

    // 5. The selected lambda never loses to the fixed lambda=1 variant on the
    // same validation rows; checked on every simulate and benchmark cell.
    {
        const ExperimentConfig bench_cfg =
            parse_config(load_config_json("configs/benchmark.json"), RunMode::benchmark);
        const RunResult bench = run_benchmark(bench_cfg);
        int cells = 0, violations = 0;
        double worst = 0.0;
        for (const RunResult* res : {&sim1, &bench})
            for (const FitRecord& f : res->fits) {
                ++cells;
                const double excess = f.fit.val_quantile_loss - f.lambda1_val_quantile_loss;
                worst = std::max(worst, excess);
                if (excess > 1e-12) ++violations;
            }
        const bool ok = violations == 0 && bench.failures.empty();
        report(5, "argmin dominance over lambda=1", ok,
               std::to_string(violations) + " violations in " + std::to_string(cells) +
                   " cells, worst excess " + fmt(worst) + " <= 1e-12");
    }

    // 6. Hand-checked metric and calibration values, all rational arithmetic.
    {
        bool ok = true;
        auto expect = [&](double got, double want, double tol) {
            if (!(std::abs(got - want) <= tol)) ok = false;
        };

        UncertaintyComponents unit; // f = 0 with unit aleatoric widths
        unit.f_hat = {0.0, 0.0, 0.0};
        unit.ale_lo = unit.ale_hi = {1.0, 1.0, 1.0};
        unit.epi_lo = unit.epi_hi = {0.0, 0.0, 0.0};
        unit.y = {0.0, 0.5, 2.0};
        const std::vector<double> s = conformity_scores(unit, 0.0);
        expect(s[0], -1.0, 1e-12);
        expect(s[1], -0.5, 1e-12);
        expect(s[2], 1.0, 1e-12);

        const std::vector<double> q1 = {-0.5, 0.2, 0.8, 1.5};
        expect(gamma1_for_lambda(q1, 0.2, OverflowMode::largest_score), 1.5, 0.0);
        std::vector<double> q2(19);
        for (std::size_t i = 0; i < 19; ++i) q2[i] = static_cast<double>(i);
        expect(gamma1_for_lambda(q2, 0.05, OverflowMode::largest_score), 18.0, 0.0);

        UncertaintyComponents one;
        one.f_hat = {0.0};
        one.ale_lo = one.ale_hi = {1.0};
        one.epi_lo = one.epi_hi = {0.5};
        const IntervalSet iv = calibrated_interval(one, 2.0, 0.5);
        expect(iv.lower[0], -1.0, 1e-12);
        expect(iv.upper[0], 1.0, 1e-12);

        IntervalSet ql_iv{{0.0}, {2.0}};
        expect(quantile_loss_of_intervals(ql_iv, std::vector<double>{1.0}, 0.1), 0.05, 1e-12);
        expect(quantile_loss_of_intervals(ql_iv, std::vector<double>{3.0}, 0.1), 0.55, 1e-12);

        // all-epistemic components: every positive lambda is equivalent, so
        // the tie-break lands on the smallest positive grid value
        Rng rng(derive_seed(20260815, 6));
        UncertaintyComponents epi_only;
        for (int i = 0; i < 10; ++i) {
            epi_only.f_hat.push_back(0.0);
            epi_only.ale_lo.push_back(0.0);
            epi_only.ale_hi.push_back(0.0);
            epi_only.epi_lo.push_back(1.0);
            epi_only.epi_hi.push_back(1.0);
            epi_only.y.push_back(rng.normal());
        }
        const ClearFit efit = fit_clear(epi_only, LambdaGrid{{0.0, 0.1, 1.0, 10.0}}, 0.1, {});
        expect(efit.lambda_star, 0.1, 0.0);

        UncertaintyComponents fv;
        fv.f_hat = {0.0};
        fv.ale_lo = fv.ale_hi = {1.0};
        fv.epi_lo = fv.epi_hi = {1.0};
        fv.y = {2.0};
        const ClearFit g1fit = fixed_variant(fv, 0.5, FixedVariant::gamma1_equals_1);
        expect(g1fit.gamma1, 1.0, 0.0);
        expect(g1fit.lambda_star, 1.0, 1e-12);

        const std::vector<double> fhat_cal = {0.0, 0.0, 0.0, 0.0};
        const std::vector<double> y_cal = {1.0, -2.0, 3.0, -4.0};
        expect(naive_baseline(fhat_cal, y_cal, 0.2), 4.0, 1e-12);

        IntervalSet unit_iv{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
        expect(niw(unit_iv, std::vector<double>{0.0, 2.0, 1.0}), 0.5, 1e-12);

        IntervalSet a_iv{{0.0}, {1.0}};
        expect(aisl(a_iv, std::vector<double>{2.0}, 0.1), 21.0, 1e-12);
        expect(aisl(a_iv, std::vector<double>{-0.5}, 0.1), 11.0, 1e-12);

        IntervalSet c_iv{{-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0}};
        const std::vector<double> c_f = {0.0, 0.0, 0.0};
        const std::vector<double> c_y = {-0.5, 0.5, 2.0};
        const NciwResult nr = nciw(c_iv, c_f, c_y, 1.0 / 3.0);
        expect(nr.c_test_cal, 0.5, 1e-12);
        expect(nr.nciw, 0.4, 1e-12);

        report(6, "metric hand checks", ok, "18 pinned values, tolerance 1e-12");
    }

    // 7. Doubling epistemic widths while halving the grid is a no-op.
    {
        int bad = 0;
        double worst = 0.0;
        for (int t = 0; t < 50; ++t) {
            Rng rng(derive_seed(20260815, 7, static_cast<std::uint64_t>(t)));
            const std::size_t n = 20 + rng.uniform_below(100);
            UncertaintyComponents cal = random_components(rng, n, true);
            UncertaintyComponents eval = random_components(rng, 25, false);
            UncertaintyComponents cal2 = cal, eval2 = eval;
            for (std::size_t i = 0; i < cal2.size(); ++i) {
                cal2.epi_lo[i] *= 2.0;
                cal2.epi_hi[i] *= 2.0;
            }
            for (std::size_t i = 0; i < eval2.size(); ++i) {
                eval2.epi_lo[i] *= 2.0;
                eval2.epi_hi[i] *= 2.0;
            }
            const LambdaGrid grid{{0.0, 0.25, 0.5, 1.0, 2.0, 4.0}};
            LambdaGrid half = grid;
            for (double& v : half.values) v /= 2.0;
            const ClearFit f1 = fit_clear(cal, grid, 0.1, {});
            const ClearFit f2 = fit_clear(cal2, half, 0.1, {});
            const IntervalSet i1 = calibrated_interval(eval, f1.lambda_star, f1.gamma1);
            const IntervalSet i2 = calibrated_interval(eval2, f2.lambda_star, f2.gamma1);
            for (std::size_t i = 0; i < eval.size(); ++i) {
                worst = std::max({worst, std::abs(i1.lower[i] - i2.lower[i]),
                                  std::abs(i1.upper[i] - i2.upper[i])});
            }
            if (worst > 1e-12) ++bad;
        }
        report(7, "grid/scale equivariance", bad == 0,
               "50 instances, max interval deviation " + fmt(worst) + " <= 1e-12");
    }

    // 8. Rescaling widths by the reported factor makes that factor 1.
    {
        int bad = 0;
        double worst_c = 0.0, worst_w = 0.0;
        for (int t = 0; t < 50; ++t) {
            Rng rng(derive_seed(20260815, 8, static_cast<std::uint64_t>(t)));
            const std::size_t n = 30 + rng.uniform_below(90);
            std::vector<double> f(n), y(n);
            IntervalSet iv;
            iv.lower.resize(n);
            iv.upper.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                f[i] = rng.normal();
                y[i] = f[i] + rng.normal() * 1.3;
                iv.lower[i] = f[i] - (std::abs(rng.normal()) + 0.05);
                iv.upper[i] = f[i] + (std::abs(rng.normal()) + 0.05);
            }
            const NciwResult first = nciw(iv, f, y, 0.1);
            IntervalSet scaled;
            scaled.lower.resize(n);
            scaled.upper.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                scaled.lower[i] = f[i] - first.c_test_cal * (f[i] - iv.lower[i]);
                scaled.upper[i] = f[i] + first.c_test_cal * (iv.upper[i] - f[i]);
            }
            const NciwResult second = nciw(scaled, f, y, 0.1);
            worst_c = std::max(worst_c, std::abs(second.c_test_cal - 1.0));
            worst_w = std::max(worst_w, std::abs(second.nciw - niw(scaled, y)));
            if (worst_c > 1e-12 || worst_w > 1e-12) ++bad;
        }
        report(8, "interval-score fixed point", bad == 0,
               "50 instances, |c-1| max " + fmt(worst_c) + ", |nciw-niw| max " + fmt(worst_w) +
                   " <= 1e-12");
    }

    // 9. Byte-identical metrics from a rerun with the same config.
    {
        const std::string a = slurp(scratch / "metrics1.csv");
        const std::string b = slurp(scratch / "metrics2.csv");
        const bool ok = !a.empty() && a == b;
        report(9, "deterministic rerun", ok,
               std::to_string(a.size()) + " bytes, rerun " + (ok ? "identical" : "differs"));
    }

    std::printf("acceptance: %d/9 passed\n", 9 - g_failures);
    return g_failures == 0 ? 0 : 1;
}
