#pragma once

// Synthetic data generator used by the simulation experiments.
//
// Coefficients beta_i are drawn iid Normal(1, 0.5). The regression surface is
//   mu(x) = 5.0 + sum_{i=1..d} (-1)^(i+1) * beta_i * |x_i|^(e_i),
// with exponent e_i = 1.5 for odd i (1-based) and 1.25 for even i. Features
// are standard normal; Y = mu(X) + sigma(X) * eps with eps ~ N(0,1). The two
// heteroskedastic noise laws are defined for d = 1 only.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "clearuq/core.hpp"
#include "clearuq/dataset.hpp"
#include "clearuq/quantiles.hpp"
#include "clearuq/random.hpp"

namespace clearuq {

enum class NoiseKind { homoskedastic, sigma2, sigma3 };

inline NoiseKind noise_kind_from_string(const std::string& s) {
    if (s == "homoskedastic") return NoiseKind::homoskedastic;
    if (s == "sigma2") return NoiseKind::sigma2;
    if (s == "sigma3") return NoiseKind::sigma3;
    throw std::invalid_argument("unknown noise kind: " + s);
}

inline std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::homoskedastic: return "homoskedastic";
        case NoiseKind::sigma2: return "sigma2";
        case NoiseKind::sigma3: return "sigma3";
    }
    return "?";
}

struct SyntheticSpec {
    std::size_t d = 1;
    NoiseKind noise = NoiseKind::homoskedastic;
    std::vector<double> betas; // size d

    void validate() const {
        if (d == 0) throw std::invalid_argument("SyntheticSpec: d must be >= 1");
        if (betas.size() != d) throw std::invalid_argument("SyntheticSpec: betas must have size d");
        if (noise != NoiseKind::homoskedastic && d != 1)
            throw std::invalid_argument("SyntheticSpec: heteroskedastic noise requires d = 1");
    }
};

inline std::vector<double> draw_coefficients(std::size_t d, std::uint64_t seed) {
    if (d == 0) throw std::invalid_argument("draw_coefficients: d must be >= 1");
    Rng rng(derive_seed(seed, 0xbe7a));
    std::vector<double> betas(d);
    for (auto& b : betas) b = rng.normal(1.0, 0.5);
    return betas;
}

inline double mean_function(const SyntheticSpec& spec, std::span<const double> x) {
    spec.validate();
    if (x.size() != spec.d) throw std::invalid_argument("mean_function: x has wrong dimension");
    double mu = 5.0;
    for (std::size_t i = 0; i < spec.d; ++i) {
        const double e = (i % 2 == 0) ? 1.5 : 1.25; // 1-based odd -> 1.5
        const double term = spec.betas[i] * std::pow(std::abs(x[i]), e);
        mu += (i % 2 == 0) ? term : -term;
    }
    return mu;
}

inline double noise_sigma(const SyntheticSpec& spec, std::span<const double> x) {
    spec.validate();
    if (x.size() != spec.d) throw std::invalid_argument("noise_sigma: x has wrong dimension");
    switch (spec.noise) {
        case NoiseKind::homoskedastic: return 1.0;
        case NoiseKind::sigma2: return 1.0 + std::abs(x[0]);
        case NoiseKind::sigma3: return 1.0 + 1.0 / (1.0 + x[0] * x[0]);
    }
    return 1.0;
}

// Draw n iid rows. All X values are drawn before any noise, so the design is
// unchanged when sigma_scale differs (sigma_scale = 0 gives noiseless targets
// for tests).
inline Dataset generate_dataset(const SyntheticSpec& spec, std::size_t n, std::uint64_t seed,
                                double sigma_scale = 1.0) {
    spec.validate();
    if (n == 0) throw std::invalid_argument("generate_dataset: n must be positive");
    Rng rng(derive_seed(seed, 0xda7a));
    Dataset ds;
    ds.features = Matrix(n, spec.d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < spec.d; ++j) ds.features(i, j) = rng.normal();
    ds.target.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto x = ds.features.row(i);
        ds.target[i] = mean_function(spec, x) + sigma_scale * noise_sigma(spec, x) * rng.normal();
    }
    for (std::size_t j = 1; j <= spec.d; ++j) ds.feature_names.push_back("x" + std::to_string(j));
    ds.target_name = "y";
    for (std::size_t j = 0; j < spec.d; ++j) ds.numeric_positions.push_back(j);
    return ds;
}

// m points uniform on the radius-r sphere: r * v / ||v|| with v standard
// normal. For d = 1 this is a fair coin between +r and -r.
inline Matrix sphere_test_points(std::size_t d, double radius, std::size_t m, std::uint64_t seed) {
    if (d == 0) throw std::invalid_argument("sphere_test_points: d must be >= 1");
    if (radius < 0.0) throw std::invalid_argument("sphere_test_points: radius must be >= 0");
    Rng rng(derive_seed(seed, 0x5fe7e));
    Matrix pts(m, d);
    std::vector<double> v(d);
    for (std::size_t i = 0; i < m; ++i) {
        double norm = 0.0;
        do {
            norm = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                v[j] = rng.normal();
                norm += v[j] * v[j];
            }
            norm = std::sqrt(norm);
        } while (norm == 0.0);
        for (std::size_t j = 0; j < d; ++j) pts(i, j) = radius * v[j] / norm;
    }
    return pts;
}

// Exact conditional central interval [mu - z*sigma, mu + z*sigma] at level
// 1 - alpha; used to report conditional-coverage curves against truth.
inline std::pair<double, double> oracle_interval(const SyntheticSpec& spec,
                                                 std::span<const double> x, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("oracle_interval: alpha in (0,1)");
    const double mu = mean_function(spec, x);
    const double sigma = noise_sigma(spec, x);
    const double z = normal_quantile(1.0 - alpha / 2.0);
    return {mu - z * sigma, mu + z * sigma};
}

} // namespace clearuq
