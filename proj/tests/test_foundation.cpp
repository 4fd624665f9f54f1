#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <set>
#include <vector>

#include "clearuq/parallel.hpp"
#include "clearuq/quantiles.hpp"
#include "clearuq/random.hpp"

using namespace clearuq;

TEST_CASE("nearest-rank index convention", "[foundation]") {
    // ceil(tau * m), 1-based
    CHECK(nearest_rank_index(0.5, 3) == 2);
    CHECK(nearest_rank_index(0.05, 3) == 1);
    CHECK(nearest_rank_index(0.95, 3) == 3);
    CHECK(nearest_rank_index(0.5, 101) == 51);
    CHECK(nearest_rank_index(0.95, 101) == 96);
    CHECK(nearest_rank_index(0.5, 4) == 2);
    CHECK(nearest_rank_index(1.0 - 1e-15, 10) == 10);
    // exact integer products must not be pushed up a rank
    CHECK(nearest_rank_index(0.1, 10) == 1);
    CHECK(nearest_rank_index(0.2, 10) == 2);
    CHECK(nearest_rank_index(0.25, 4) == 1);
    CHECK_THROWS_AS(nearest_rank_index(0.5, 0), std::invalid_argument);
}

TEST_CASE("kth smallest and nearest-rank quantile", "[foundation]") {
    std::vector<double> v{3.0, 1.0, 2.0, 5.0, 4.0};
    CHECK(kth_smallest(v, 1) == 1.0);
    CHECK(kth_smallest(v, 5) == 5.0);
    CHECK(kth_smallest(v, 3) == 3.0);
    CHECK(nearest_rank_quantile(v, 0.5) == 3.0);
    CHECK(nearest_rank_quantile(v, 0.9) == 5.0);
    CHECK_THROWS_AS(kth_smallest(v, 0), std::invalid_argument);
    CHECK_THROWS_AS(kth_smallest(v, 6), std::invalid_argument);
}

TEST_CASE("conformal rank and quantile", "[foundation]") {
    CHECK(conformal_rank(0.2, 4) == 4);   // ceil(0.8 * 5)
    CHECK(conformal_rank(1.0 / 3.0, 3) == 3);  // ceil((2/3) * 4)
    CHECK(conformal_rank(0.05, 19) == 19); // ceil(0.95 * 20)
    CHECK(conformal_rank(0.05, 4) == 5);   // overflow: rank > n
    CHECK(conformal_rank(0.1, 1500) == 1351);

    std::vector<double> scores{-0.5, 0.2, 0.8, 1.5};
    auto q = conformal_quantile(scores, 0.2, OverflowMode::largest_score);
    CHECK(q.value == 1.5);
    CHECK_FALSE(q.overflowed);

    auto largest = conformal_quantile(scores, 0.05, OverflowMode::largest_score);
    CHECK(largest.value == 1.5);
    CHECK(largest.overflowed);

    auto inf = conformal_quantile(scores, 0.05, OverflowMode::infinite);
    CHECK(std::isinf(inf.value));
    CHECK(inf.overflowed);

    std::vector<double> seq;
    for (int i = 1; i <= 19; ++i) seq.push_back(static_cast<double>(i));
    CHECK(conformal_quantile(seq, 0.05, OverflowMode::largest_score).value == 19.0);
}

TEST_CASE("standard normal quantile", "[foundation]") {
    CHECK(std::abs(normal_quantile(0.975) - 1.959963984540054) < 1e-9);
    CHECK(std::abs(normal_quantile(0.95) - 1.6448536269514722) < 1e-9);
    CHECK(std::abs(normal_quantile(0.5)) < 1e-12);
    CHECK(std::abs(normal_quantile(0.9) - 1.2815515655446004) < 1e-9);

    // symmetry and round trip through Phi
    for (double p : {1e-6, 1e-4, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 0.9999, 1.0 - 1e-6}) {
        const double z = normal_quantile(p);
        CHECK(std::abs(z + normal_quantile(1.0 - p)) < 1e-10);
        const double back = 0.5 * std::erfc(-z / std::sqrt(2.0));
        CHECK(std::abs(back - p) < 1e-9);
    }
    // monotone
    double prev = normal_quantile(0.001);
    for (double p = 0.002; p < 0.999; p += 0.001) {
        const double z = normal_quantile(p);
        CHECK(z > prev);
        prev = z;
    }
    CHECK_THROWS_AS(normal_quantile(0.0), std::invalid_argument);
    CHECK_THROWS_AS(normal_quantile(1.0), std::invalid_argument);
}

TEST_CASE("rng determinism and ranges", "[foundation]") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const auto va = a.next_u64();
        all_equal = all_equal && va == b.next_u64();
        any_diff = any_diff || va != c.next_u64();
    }
    CHECK(all_equal);
    CHECK(any_diff);

    Rng r(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(r.uniform_below(10) < 10);
    }
}

TEST_CASE("rng normal moments", "[foundation]") {
    Rng r(123);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        sum += z;
        sum2 += z * z;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("rng permutation is a permutation", "[foundation]") {
    Rng r(5);
    auto p = r.permutation(1000);
    std::set<std::size_t> seen(p.begin(), p.end());
    CHECK(seen.size() == 1000);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 999);

    Rng r2(5);
    CHECK(r2.permutation(1000) == p);
}

TEST_CASE("derive_seed separates streams", "[foundation]") {
    std::set<std::uint64_t> seeds;
    for (std::uint64_t i = 0; i < 100; ++i) {
        seeds.insert(derive_seed(42, i));
        seeds.insert(derive_seed(42, i, 1));
        seeds.insert(derive_seed(43, i));
    }
    CHECK(seeds.size() == 300);
    CHECK(derive_seed(42, 7, 3) == derive_seed(42, 7, 3));
}

TEST_CASE("parallel_for covers all slots and propagates errors", "[foundation]") {
    std::vector<int> hit(500, 0);
    parallel_for(hit.size(), 4, [&](std::size_t i) { hit[i] = static_cast<int>(i) + 1; });
    for (std::size_t i = 0; i < hit.size(); ++i) CHECK(hit[i] == static_cast<int>(i) + 1);

    CHECK_THROWS_AS(parallel_for(16, 4,
                                 [&](std::size_t i) {
                                     if (i == 7) throw std::runtime_error("boom");
                                 }),
                    std::runtime_error);
}
