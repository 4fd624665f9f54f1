#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "clearuq/clear.hpp"

using namespace clearuq;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

UncertaintyComponents symmetric(std::vector<double> f_hat, std::vector<double> ale,
                                std::vector<double> epi, std::vector<double> y = {}) {
    UncertaintyComponents c;
    c.f_hat = std::move(f_hat);
    c.ale_lo = ale;
    c.ale_hi = std::move(ale);
    c.epi_lo = epi;
    c.epi_hi = std::move(epi);
    c.y = std::move(y);
    return c;
}

UncertaintyComponents random_components(Rng& rng, std::size_t n, double noise = 1.0) {
    UncertaintyComponents c;
    c.f_hat.resize(n);
    c.ale_lo.resize(n);
    c.ale_hi.resize(n);
    c.epi_lo.resize(n);
    c.epi_hi.resize(n);
    c.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        c.f_hat[i] = 3.0 * rng.normal();
        c.ale_lo[i] = std::abs(rng.normal());
        c.ale_hi[i] = std::abs(rng.normal());
        c.epi_lo[i] = 0.5 * std::abs(rng.normal());
        c.epi_hi[i] = 0.5 * std::abs(rng.normal());
        c.y[i] = c.f_hat[i] + noise * rng.normal();
    }
    return c;
}

} // namespace

TEST_CASE("conformity scores: center scores -1, boundary scores 0", "[clear]") {
    // unit aleatoric widths, no epistemic: pre-interval is [-1, 1]
    auto comp = symmetric({0.0, 0.0, 0.0, 0.0}, {1.0, 1.0, 1.0, 1.0}, {0.0, 0.0, 0.0, 0.0},
                          {0.0, 0.5, 2.0, 1.0});
    const auto s = conformity_scores(comp, 0.0);
    CHECK(s[0] == -1.0); // dead center
    CHECK(s[1] == -0.5); // halfway to the upper edge
    CHECK(s[2] == 1.0);  // one full width beyond the edge
    CHECK(s[3] == 0.0);  // exactly on the edge
}

TEST_CASE("conformity scores scale with lambda through the epistemic width", "[clear]") {
    auto comp = symmetric({0.0}, {1.0}, {0.5}, {3.0});
    // lambda = 2: width 1 + 2*0.5 = 2, so y = 3 sits half a width outside
    CHECK(conformity_scores(comp, 2.0)[0] == 0.5);
    // lambda = 4: width 3, y on the boundary
    CHECK(conformity_scores(comp, 4.0)[0] == 0.0);
}

TEST_CASE("conformity scores: violated zero-width side is infinite", "[clear]") {
    auto comp = symmetric({0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}, {1.0, 0.0});
    const auto s = conformity_scores(comp, 0.0);
    CHECK(s[0] == kInf);
    CHECK(s[1] == 0.0); // y at the center of a zero-width interval is covered
}

TEST_CASE("gamma1_for_lambda picks the conformal score quantile", "[clear]") {
    const std::vector<double> scores{-0.5, 0.2, 0.8, 1.5};
    // rank ceil(0.8 * 5) = 4
    CHECK(gamma1_for_lambda(scores, 0.2, OverflowMode::largest_score) == 1.5);
    // rank ceil(0.5 * 5) = 3
    CHECK(gamma1_for_lambda(scores, 0.5, OverflowMode::largest_score) == 0.8);
    // rank ceil(0.95 * 5) = 5 overflows n = 4
    CHECK(gamma1_for_lambda(scores, 0.05, OverflowMode::largest_score) == 1.5);
    CHECK(gamma1_for_lambda(scores, 0.05, OverflowMode::infinite) == kInf);
    CHECK_THROWS_AS(gamma1_for_lambda({}, 0.2, OverflowMode::largest_score),
                    std::invalid_argument);
}

TEST_CASE("calibrated interval applies gamma1 to the lambda widths", "[clear]") {
    auto comp = symmetric({0.0}, {1.0}, {0.5});
    // width 1 + 2*0.5 = 2 scaled by 0.5 -> [-1, 1]
    const auto iv = calibrated_interval(comp, 2.0, 0.5);
    CHECK(iv.lower[0] == -1.0);
    CHECK(iv.upper[0] == 1.0);

    // zero-width sides stay at f_hat even for infinite gamma1
    auto degen = symmetric({2.0}, {0.0}, {0.0});
    const auto iv2 = calibrated_interval(degen, 1.0, kInf);
    CHECK(iv2.lower[0] == 2.0);
    CHECK(iv2.upper[0] == 2.0);
}

TEST_CASE("interval quantile loss, hand-computed", "[clear]") {
    IntervalSet iv;
    iv.lower = {0.0, 0.0};
    iv.upper = {2.0, 2.0};
    const std::vector<double> y{1.0, 3.0};
    // alpha 0.2: taus 0.1/0.9
    // y=1: 0.5*(1*0.1 + 1*0.1) = 0.1; y=3: 0.5*(3*0.1 + 1*0.9) = 0.6
    CHECK(quantile_loss_of_intervals(iv, y, 0.2) == Catch::Approx(0.35).margin(1e-12));

    iv.upper[1] = kInf;
    CHECK(quantile_loss_of_intervals(iv, y, 0.2) == kInf);
    CHECK_THROWS_AS(quantile_loss_of_intervals(iv, std::vector<double>{1.0}, 0.2),
                    std::invalid_argument);
}

TEST_CASE("naive baseline is the conformal absolute-residual quantile", "[clear]") {
    const std::vector<double> f_hat{0, 0, 0, 0};
    const std::vector<double> y{1.0, -2.0, 3.0, -4.0};
    CHECK(naive_baseline(f_hat, y, 0.2) == 4.0); // rank ceil(0.8*5) = 4
    CHECK(naive_baseline(f_hat, y, 0.5) == 3.0);
    CHECK_THROWS_AS(naive_baseline(f_hat, std::vector<double>{1.0}, 0.2), std::invalid_argument);
}

TEST_CASE("default lambda grid shape", "[clear]") {
    const auto grid = default_lambda_grid();
    grid.validate();
    CHECK(grid.values.size() >= 4010);
    CHECK(grid.values.size() <= 4011);
    CHECK(grid.values.front() == 0.0);
    CHECK(grid.values.back() == Catch::Approx(100.0).margin(1e-9));
    CHECK(std::find(grid.values.begin(), grid.values.end(), 1.0) != grid.values.end());
    for (int i = 0; i < 10; ++i) CHECK(grid.values[i] == 0.01 * i);
    // linear head then the log segment starting at 0.1: nothing in between
    for (double v : grid.values)
        CHECK(!(v > 0.09 + 1e-15 && v < 0.1 - 1e-15));
    for (std::size_t i = 1; i < grid.values.size(); ++i)
        CHECK(grid.values[i] > grid.values[i - 1]);
}

TEST_CASE("lambda grid validation", "[clear]") {
    const LambdaGrid empty{{}};
    const LambdaGrid repeated{{0.5, 0.5}};
    const LambdaGrid negative{{-1.0, 0.5}};
    const LambdaGrid unbounded{{0.0, kInf}};
    CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
    CHECK_THROWS_AS(repeated.validate(), std::invalid_argument);
    CHECK_THROWS_AS(negative.validate(), std::invalid_argument);
    CHECK_THROWS_AS(unbounded.validate(), std::invalid_argument);
    LambdaGrid ok{{0.25, 0.5, 2.0}}; // need not contain 0 or 1
    ok.validate();
}

TEST_CASE("components validation", "[clear]") {
    auto good = symmetric({0.0}, {1.0}, {1.0}, {0.5});
    good.validate(true);

    auto neg = good;
    neg.ale_lo[0] = -0.1;
    CHECK_THROWS_AS(neg.validate(false), std::invalid_argument);
    auto nan = good;
    nan.f_hat[0] = std::nan("");
    CHECK_THROWS_AS(nan.validate(false), std::invalid_argument);
    auto short_epi = good;
    short_epi.epi_hi.clear();
    CHECK_THROWS_AS(short_epi.validate(false), std::invalid_argument);
    auto no_y = good;
    no_y.y.clear();
    no_y.validate(false);
    CHECK_THROWS_AS(no_y.validate(true), std::invalid_argument);

    // take() reorders every field coherently
    Rng rng(4);
    auto comp = random_components(rng, 10);
    const std::vector<std::size_t> idx{7, 2, 2};
    const auto sub = comp.take(idx);
    CHECK(sub.size() == 3);
    CHECK(sub.f_hat[0] == comp.f_hat[7]);
    CHECK(sub.y[1] == comp.y[2]);
    CHECK(sub.epi_hi[2] == comp.epi_hi[2]);
}

TEST_CASE("gamma1 is the minimal covering factor on the calibration set", "[clear]") {
    Rng rng(1212);
    for (int rep = 0; rep < 40; ++rep) {
        auto comp = random_components(rng, 10 + rng.uniform_below(80));
        const double lambda = rng.uniform01() * 3.0;
        const double alpha = 0.05 + 0.4 * rng.uniform01();
        const auto scores = conformity_scores(comp, lambda);
        const double q = gamma1_for_lambda(scores, alpha, OverflowMode::largest_score);

        const std::size_t n = comp.size();
        const auto need = static_cast<std::size_t>(
            std::ceil((1.0 - alpha) * static_cast<double>(n + 1) - 1e-9));
        // coverage by factor g = 1 + q is exactly the event score <= q
        const auto covered = static_cast<std::size_t>(
            std::count_if(scores.begin(), scores.end(), [&](double s) { return s <= q; }));
        if (need <= n) {
            CHECK(covered >= need);
            double prev = -kInf;
            for (double s : scores)
                if (s < q) prev = std::max(prev, s);
            if (std::isfinite(prev)) {
                const auto covered_prev = static_cast<std::size_t>(std::count_if(
                    scores.begin(), scores.end(), [&](double s) { return s <= prev; }));
                CHECK(covered_prev < need);
            }
        }
    }
}

TEST_CASE("fit_clear: no epistemic signal drives lambda to zero", "[clear]") {
    Rng rng(700);
    auto comp = random_components(rng, 300);
    std::fill(comp.epi_lo.begin(), comp.epi_lo.end(), 0.0);
    std::fill(comp.epi_hi.begin(), comp.epi_hi.end(), 0.0);
    const auto fit = fit_clear(comp, default_lambda_grid(), 0.1);
    CHECK(fit.lambda_star == 0.0);
    CHECK(fit.gamma1 >= 0.0);
    CHECK(fit.gamma2 == 0.0);
    CHECK(std::isfinite(fit.val_quantile_loss));
}

TEST_CASE("fit_clear: no aleatoric signal makes lambda a free scale", "[clear]") {
    Rng rng(701);
    auto comp = random_components(rng, 200);
    std::fill(comp.ale_lo.begin(), comp.ale_lo.end(), 0.0);
    std::fill(comp.ale_hi.begin(), comp.ale_hi.end(), 0.0);
    const auto grid = default_lambda_grid();
    const auto fit = fit_clear(comp, grid, 0.1);
    // lambda = 0 zeroes the width, so every positive lambda gives the same
    // calibrated intervals and the tie goes to the smallest
    CHECK(fit.lambda_star == 0.01);

    const auto iv_star = calibrated_interval(
        comp, fit.lambda_star, fit.gamma1);
    const auto scores1 = conformity_scores(comp, 1.0);
    const double g1 = 1.0 + gamma1_for_lambda(scores1, 0.1, OverflowMode::largest_score);
    const auto iv_1 = calibrated_interval(comp, 1.0, g1);
    for (std::size_t i = 0; i < comp.size(); ++i) {
        CHECK(iv_star.lower[i] == Catch::Approx(iv_1.lower[i]).margin(1e-9));
        CHECK(iv_star.upper[i] == Catch::Approx(iv_1.upper[i]).margin(1e-9));
    }
}

TEST_CASE("fit_clear records the per-lambda losses and the minimum", "[clear]") {
    Rng rng(702);
    auto comp = random_components(rng, 150);
    LambdaGrid grid{{0.0, 0.5, 1.0, 2.0, 10.0}};
    const auto fit = fit_clear(comp, grid, 0.2);
    REQUIRE(fit.per_lambda_loss.size() == 5);
    CHECK(fit.grid_size == 5);
    double best = kInf;
    for (const auto& [lam, loss] : fit.per_lambda_loss) best = std::min(best, loss);
    CHECK(fit.val_quantile_loss <= best + 1e-12);
    CHECK(fit.gamma2 == fit.lambda_star * fit.gamma1);
    const bool in_grid =
        std::find(grid.values.begin(), grid.values.end(), fit.lambda_star) != grid.values.end();
    CHECK(in_grid);
}

TEST_CASE("clear never loses to the fixed lambda=1 ablation on validation loss", "[clear]") {
    Rng rng(703);
    for (int rep = 0; rep < 10; ++rep) {
        auto comp = random_components(rng, 100 + rng.uniform_below(200), 0.5 + rng.uniform01());
        const double alpha = 0.05 + 0.2 * rng.uniform01();
        const auto full = fit_clear(comp, default_lambda_grid(), alpha);
        const auto fixed = fixed_variant(comp, alpha, FixedVariant::lambda_equals_1);
        CHECK(full.val_quantile_loss <= fixed.val_quantile_loss + 1e-12);
    }
}

TEST_CASE("fixed lambda=1 equals fit_clear on a singleton grid", "[clear]") {
    Rng rng(704);
    auto comp = random_components(rng, 120);
    const auto fixed = fixed_variant(comp, 0.1, FixedVariant::lambda_equals_1);
    const auto single = fit_clear(comp, LambdaGrid{{1.0}}, 0.1);
    CHECK(fixed.lambda_star == 1.0);
    CHECK(fixed.gamma1 == single.gamma1);
    CHECK(fixed.val_quantile_loss == single.val_quantile_loss);
    CHECK(fixed.gamma2 == single.gamma2);
}

TEST_CASE("fixed gamma1=1 finds the minimal per-point lambda quantile", "[clear]") {
    // one point: y = 3 with unit aleatoric and unit epistemic width needs
    // lambda = 2 to land on the boundary
    auto comp = symmetric({0.0}, {1.0}, {1.0}, {3.0});
    const auto fit = fixed_variant(comp, 0.2, FixedVariant::gamma1_equals_1);
    CHECK(fit.lambda_star == 2.0);
    CHECK(fit.gamma1 == 1.0);
    CHECK(fit.gamma2 == 2.0);
    const auto iv = calibrated_interval(comp, fit.lambda_star, 1.0);
    CHECK(iv.lower[0] == -3.0);
    CHECK(iv.upper[0] == 3.0);

    // points already inside the aleatoric band need lambda 0
    auto inside = symmetric({0.0, 0.0}, {2.0, 2.0}, {1.0, 1.0}, {1.0, -0.5});
    const auto fit2 = fixed_variant(inside, 0.5, FixedVariant::gamma1_equals_1);
    CHECK(fit2.lambda_star == 0.0);
}

TEST_CASE("fixed gamma1=1 covers like a conformal method", "[clear]") {
    Rng rng(705);
    auto comp = random_components(rng, 400);
    const double alpha = 0.1;
    const auto fit = fixed_variant(comp, alpha, FixedVariant::gamma1_equals_1);
    const auto iv = calibrated_interval(comp, fit.lambda_star, 1.0);
    // the quantile-defining point lands exactly on the boundary, so give the
    // membership test a hair of slack against rounding
    std::size_t covered = 0;
    for (std::size_t i = 0; i < comp.size(); ++i)
        covered += comp.y[i] >= iv.lower[i] - 1e-9 && comp.y[i] <= iv.upper[i] + 1e-9;
    const auto need = static_cast<std::size_t>(std::ceil(0.9 * 401.0 - 1e-9));
    CHECK(covered >= need);
}

TEST_CASE("fit_clear coverage generalizes to fresh exchangeable data", "[clear]") {
    Rng rng(706);
    auto cal = random_components(rng, 800);
    auto test = random_components(rng, 4000);
    const double alpha = 0.1;
    const auto fit = fit_clear(cal, default_lambda_grid(), alpha);
    const auto iv = calibrated_interval(test, fit.lambda_star, fit.gamma1);
    double covered = 0;
    for (std::size_t i = 0; i < test.size(); ++i)
        covered += (test.y[i] >= iv.lower[i] && test.y[i] <= iv.upper[i]) ? 1.0 : 0.0;
    const double picp = covered / static_cast<double>(test.size());
    CHECK(picp > 0.87);
    CHECK(picp < 0.94);
}

TEST_CASE("fit_clear threads do not change the answer", "[clear]") {
    Rng rng(707);
    auto comp = random_components(rng, 250);
    ClearOptions one;
    one.threads = 1;
    ClearOptions four;
    four.threads = 4;
    const auto a = fit_clear(comp, default_lambda_grid(), 0.1, one);
    const auto b = fit_clear(comp, default_lambda_grid(), 0.1, four);
    CHECK(a.lambda_star == b.lambda_star);
    CHECK(a.gamma1 == b.gamma1);
    CHECK(a.val_quantile_loss == b.val_quantile_loss);
}

TEST_CASE("conformalized mode splits rows and calibrates strictly", "[clear]") {
    Rng rng(708);
    auto comp = random_components(rng, 400);
    ClearOptions opt;
    opt.mode = ClearMode::conformalized;
    opt.seed = 99;
    const auto fit = fit_clear(comp, default_lambda_grid(), 0.1, opt);
    CHECK(std::isfinite(fit.gamma1));
    CHECK(fit.gamma1 >= 0.0);

    // deterministic in the seed
    const auto again = fit_clear(comp, default_lambda_grid(), 0.1, opt);
    CHECK(fit.lambda_star == again.lambda_star);
    CHECK(fit.gamma1 == again.gamma1);

    // the split changes with the seed, and with it (generally) the fit
    ClearOptions other = opt;
    other.seed = 100;
    const auto moved = fit_clear(comp, default_lambda_grid(), 0.1, other);
    CHECK((moved.lambda_star != fit.lambda_star || moved.gamma1 != fit.gamma1));
}

TEST_CASE("conformalized mode small-sample overflow gives infinite gamma1", "[clear]") {
    Rng rng(709);
    auto comp = random_components(rng, 4);
    ClearOptions opt;
    opt.mode = ClearMode::conformalized;
    // cal part has 2 rows; rank ceil(0.95*3) = 3 overflows -> +inf
    const auto fit = fit_clear(comp, LambdaGrid{{0.0, 1.0}}, 0.05, opt);
    CHECK(fit.gamma1 == kInf);
}

TEST_CASE("conformalized mode rejects degenerate splits", "[clear]") {
    Rng rng(710);
    auto comp = random_components(rng, 10);
    ClearOptions opt;
    opt.mode = ClearMode::conformalized;
    opt.conformal_fraction = 0.0;
    CHECK_THROWS_AS(fit_clear(comp, LambdaGrid{{1.0}}, 0.1, opt), std::invalid_argument);
    opt.conformal_fraction = 1.0;
    CHECK_THROWS_AS(fit_clear(comp, LambdaGrid{{1.0}}, 0.1, opt), std::invalid_argument);
}

TEST_CASE("scores are never below -1 and gamma1 never negative", "[clear]") {
    Rng rng(711);
    for (int rep = 0; rep < 20; ++rep) {
        auto comp = random_components(rng, 5 + rng.uniform_below(50));
        const double lambda = rng.uniform01() * 5.0;
        for (double s : conformity_scores(comp, lambda)) CHECK(s >= -1.0);
        const auto fit = fit_clear(comp, LambdaGrid{{0.0, 0.3, 1.0, 3.0}},
                                   0.05 + 0.4 * rng.uniform01());
        CHECK(fit.gamma1 >= 0.0);
    }
}
