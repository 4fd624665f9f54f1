#pragma once

// Experiment configuration: a single JSON file drives the simulate, benchmark
// and calibrate subcommands. Unknown keys are rejected so typos fail loudly.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "clearuq/clear.hpp"
#include "clearuq/dataset.hpp"
#include "clearuq/learners.hpp"
#include "clearuq/parallel.hpp"
#include "clearuq/random.hpp"
#include "clearuq/synthetic.hpp"

namespace clearuq {

enum class RunMode { simulate, benchmark, calibrate };

inline RunMode run_mode_from_string(const std::string& s) {
    if (s == "simulate") return RunMode::simulate;
    if (s == "benchmark") return RunMode::benchmark;
    if (s == "calibrate") return RunMode::calibrate;
    throw std::invalid_argument("unknown mode: " + s + " (expected simulate|benchmark|calibrate)");
}

struct DatasetRef {
    std::string path;
    std::string target;
    std::string name; // file stem, used in report rows
};

struct SyntheticConfig {
    std::vector<std::size_t> d_per_replicate = {1}; // cycled i mod len
    NoiseKind noise = NoiseKind::homoskedastic;
    std::size_t n = 5000;
    std::vector<double> radii = {0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0};
    std::size_t sphere_points_per_radius = 2000;
    std::size_t marginal_test_size = 2000;
};

struct ExperimentConfig {
    RunMode mode = RunMode::simulate;
    double alpha = 0.1; // default depends on mode; see parse_config
    std::vector<std::uint64_t> seeds = {1};

    std::vector<LearnerSpec> pool; // defaulted in parse_config when absent
    std::size_t top_k = 1;
    std::size_t ensemble_size = 100;

    LearnerSpec aleatoric_learner;
    bool aleatoric_learner_set = false; // false: fall back to the pool ranking
    std::size_t aleatoric_bags = 100;

    std::vector<double> lambda_grid; // empty: default_lambda_grid()
    SplitFractions split{0.7, 0.3, 0.0};

    SyntheticConfig synthetic;
    std::vector<DatasetRef> datasets;

    ClearMode clear_mode = ClearMode::reuse_val;
    double conformal_fraction = 0.5;

    std::size_t threads = 1;

    std::string calibration_csv;
    std::string test_csv;
};

inline std::vector<LearnerSpec> default_learner_pool() {
    return {
        LearnerSpec{LearnerKind::quantile_forest, {{"trees", 100.0}, {"min_leaf", 10.0}}},
        LearnerSpec{LearnerKind::knn_quantile, {{"k", 10.0}}},
        LearnerSpec{LearnerKind::regression_tree, {{"min_leaf", 5.0}}},
        LearnerSpec{LearnerKind::linear_pinball, {}},
    };
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                                const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key()))
            throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
    }
}

inline double number_at(const nlohmann::json& obj, const std::string& key) {
    const nlohmann::json& v = obj.at(key);
    if (!v.is_number()) throw std::invalid_argument("config: '" + key + "' must be a number");
    return v.get<double>();
}

inline std::size_t count_at(const nlohmann::json& obj, const std::string& key) {
    const nlohmann::json& v = obj.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw std::invalid_argument("config: '" + key + "' must be a nonnegative integer");
    return v.get<std::size_t>();
}

inline LearnerSpec learner_spec_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
    reject_unknown_keys(j, {"kind", "hyperparameters"}, where);
    if (!j.contains("kind")) throw std::invalid_argument("config: " + where + " needs 'kind'");
    LearnerSpec spec;
    spec.kind = learner_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("hyperparameters")) {
        const nlohmann::json& h = j.at("hyperparameters");
        if (!h.is_object())
            throw std::invalid_argument("config: " + where + ".hyperparameters must be an object");
        for (auto it = h.begin(); it != h.end(); ++it) {
            if (!it.value().is_number())
                throw std::invalid_argument("config: " + where + ".hyperparameters." + it.key() +
                                            " must be a number");
            spec.hyperparameters[it.key()] = it.value().get<double>();
        }
    }
    return spec;
}

inline std::string file_stem(const std::string& path) {
    std::size_t slash = path.find_last_of("/\\");
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    std::size_t dot = base.find_last_of('.');
    return dot == std::string::npos || dot == 0 ? base : base.substr(0, dot);
}

} // namespace detail

inline nlohmann::json load_config_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config parse error in " + path + ": " + e.what());
    }
    if (!j.is_object()) throw std::runtime_error("config root must be a JSON object: " + path);
    return j;
}

// `seed_offset` shifts every replicate seed, so disjoint seed ranges can be
// launched without editing the config file.
inline ExperimentConfig parse_config(const nlohmann::json& j, RunMode mode,
                                     std::uint64_t seed_offset = 0) {
    ExperimentConfig cfg;
    cfg.mode = mode;
    cfg.alpha = mode == RunMode::benchmark ? 0.05 : 0.1;
    cfg.split = mode == RunMode::benchmark ? SplitFractions{0.6, 0.2, 0.2}
                                           : SplitFractions{0.7, 0.3, 0.0};

    detail::reject_unknown_keys(
        j,
        {"alpha", "seeds", "master_seed", "replicates", "learner_pool", "top_k", "ensemble_size",
         "aleatoric", "lambda_grid", "split", "synthetic", "datasets", "conformal", "threads",
         "calibration_csv", "test_csv"},
        "config root");

    if (j.contains("alpha")) cfg.alpha = detail::number_at(j, "alpha");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
        throw std::invalid_argument("config: alpha must lie in (0,1)");

    // Seeds: an explicit list, or master_seed + replicates derivation.
    const bool has_list = j.contains("seeds");
    const bool has_master = j.contains("master_seed") || j.contains("replicates");
    if (has_list && has_master)
        throw std::invalid_argument("config: give either 'seeds' or 'master_seed'/'replicates'");
    if (has_list) {
        cfg.seeds.clear();
        for (const nlohmann::json& s : j.at("seeds")) {
            if (!s.is_number_integer())
                throw std::invalid_argument("config: 'seeds' entries must be integers");
            cfg.seeds.push_back(s.get<std::uint64_t>() + seed_offset);
        }
    } else {
        std::uint64_t master = 0;
        std::size_t replicates = 1;
        if (j.contains("master_seed")) master = j.at("master_seed").get<std::uint64_t>();
        if (j.contains("replicates")) replicates = detail::count_at(j, "replicates");
        cfg.seeds.clear();
        for (std::size_t i = 0; i < replicates; ++i)
            cfg.seeds.push_back(derive_seed(master, i + seed_offset));
    }
    if (cfg.seeds.empty()) throw std::invalid_argument("config: no seeds");

    if (j.contains("learner_pool")) {
        if (!j.at("learner_pool").is_array() || j.at("learner_pool").empty())
            throw std::invalid_argument("config: 'learner_pool' must be a nonempty array");
        std::size_t i = 0;
        for (const nlohmann::json& e : j.at("learner_pool"))
            cfg.pool.push_back(
                detail::learner_spec_from_json(e, "learner_pool[" + std::to_string(i++) + "]"));
    } else {
        cfg.pool = default_learner_pool();
    }

    if (j.contains("top_k")) cfg.top_k = detail::count_at(j, "top_k");
    if (cfg.top_k == 0 || cfg.top_k > cfg.pool.size())
        throw std::invalid_argument("config: top_k must lie in [1, pool size]");
    if (j.contains("ensemble_size")) cfg.ensemble_size = detail::count_at(j, "ensemble_size");
    if (cfg.ensemble_size == 0) throw std::invalid_argument("config: ensemble_size must be >= 1");

    if (j.contains("aleatoric")) {
        const nlohmann::json& a = j.at("aleatoric");
        detail::reject_unknown_keys(a, {"learner", "bag_count"}, "aleatoric");
        if (a.contains("learner")) {
            cfg.aleatoric_learner = detail::learner_spec_from_json(a.at("learner"), "aleatoric.learner");
            cfg.aleatoric_learner_set = true;
        }
        if (a.contains("bag_count")) cfg.aleatoric_bags = detail::count_at(a, "bag_count");
        if (cfg.aleatoric_bags == 0)
            throw std::invalid_argument("config: aleatoric.bag_count must be >= 1");
    }

    if (j.contains("lambda_grid")) {
        for (const nlohmann::json& v : j.at("lambda_grid")) {
            if (!v.is_number()) throw std::invalid_argument("config: lambda_grid entries must be numbers");
            cfg.lambda_grid.push_back(v.get<double>());
        }
        LambdaGrid{cfg.lambda_grid}.validate();
    }

    if (j.contains("split")) {
        const nlohmann::json& s = j.at("split");
        detail::reject_unknown_keys(s, {"train", "cal", "test"}, "split");
        cfg.split.train = detail::number_at(s, "train");
        cfg.split.cal = detail::number_at(s, "cal");
        cfg.split.test = s.contains("test") ? detail::number_at(s, "test") : 0.0;
    }

    if (j.contains("synthetic")) {
        const nlohmann::json& s = j.at("synthetic");
        detail::reject_unknown_keys(s,
                                    {"d", "d_per_replicate", "noise", "n", "radii",
                                     "sphere_points_per_radius", "marginal_test_size"},
                                    "synthetic");
        if (s.contains("d") && s.contains("d_per_replicate"))
            throw std::invalid_argument("config: give either synthetic.d or synthetic.d_per_replicate");
        if (s.contains("d")) cfg.synthetic.d_per_replicate = {detail::count_at(s, "d")};
        if (s.contains("d_per_replicate")) {
            cfg.synthetic.d_per_replicate.clear();
            for (const nlohmann::json& v : s.at("d_per_replicate")) {
                if (!v.is_number_integer() || v.get<long long>() <= 0)
                    throw std::invalid_argument("config: d_per_replicate entries must be positive integers");
                cfg.synthetic.d_per_replicate.push_back(v.get<std::size_t>());
            }
            if (cfg.synthetic.d_per_replicate.empty())
                throw std::invalid_argument("config: d_per_replicate must be nonempty");
        }
        for (std::size_t d : cfg.synthetic.d_per_replicate)
            if (d == 0) throw std::invalid_argument("config: synthetic d must be >= 1");
        if (s.contains("noise"))
            cfg.synthetic.noise = noise_kind_from_string(s.at("noise").get<std::string>());
        if (s.contains("n")) cfg.synthetic.n = detail::count_at(s, "n");
        if (cfg.synthetic.n < 3) throw std::invalid_argument("config: synthetic.n must be >= 3");
        if (s.contains("radii")) {
            cfg.synthetic.radii.clear();
            for (const nlohmann::json& v : s.at("radii")) {
                double r = v.is_number() ? v.get<double>() : -1.0;
                if (!(r >= 0.0)) throw std::invalid_argument("config: radii must be >= 0");
                cfg.synthetic.radii.push_back(r);
            }
        }
        if (s.contains("sphere_points_per_radius"))
            cfg.synthetic.sphere_points_per_radius = detail::count_at(s, "sphere_points_per_radius");
        if (s.contains("marginal_test_size"))
            cfg.synthetic.marginal_test_size = detail::count_at(s, "marginal_test_size");
        if (cfg.synthetic.marginal_test_size == 0)
            throw std::invalid_argument("config: marginal_test_size must be >= 1");
    }

    if (j.contains("datasets")) {
        for (const nlohmann::json& e : j.at("datasets")) {
            if (!e.is_object()) throw std::invalid_argument("config: datasets entries must be objects");
            detail::reject_unknown_keys(e, {"path", "target", "name"}, "datasets[]");
            DatasetRef ref;
            ref.path = e.at("path").get<std::string>();
            ref.target = e.at("target").get<std::string>();
            ref.name = e.contains("name") ? e.at("name").get<std::string>()
                                          : detail::file_stem(ref.path);
            cfg.datasets.push_back(ref);
        }
    }

    if (j.contains("conformal")) {
        const nlohmann::json& c = j.at("conformal");
        detail::reject_unknown_keys(c, {"mode", "fraction"}, "conformal");
        if (c.contains("mode")) {
            std::string m = c.at("mode").get<std::string>();
            if (m == "reuse_val") cfg.clear_mode = ClearMode::reuse_val;
            else if (m == "conformalized") cfg.clear_mode = ClearMode::conformalized;
            else throw std::invalid_argument("config: conformal.mode must be reuse_val|conformalized");
        }
        if (c.contains("fraction")) cfg.conformal_fraction = detail::number_at(c, "fraction");
        if (!(cfg.conformal_fraction > 0.0 && cfg.conformal_fraction < 1.0))
            throw std::invalid_argument("config: conformal.fraction must lie in (0,1)");
    }

    if (j.contains("threads")) cfg.threads = detail::count_at(j, "threads");
    if (cfg.threads == 0) cfg.threads = default_thread_count();

    if (j.contains("calibration_csv")) cfg.calibration_csv = j.at("calibration_csv").get<std::string>();
    if (j.contains("test_csv")) cfg.test_csv = j.at("test_csv").get<std::string>();

    // Mode-specific requirements.
    if (mode == RunMode::benchmark && cfg.datasets.empty())
        throw std::invalid_argument("config: benchmark mode needs a nonempty 'datasets' array");
    if (mode == RunMode::calibrate && cfg.calibration_csv.empty())
        throw std::invalid_argument("config: calibrate mode needs 'calibration_csv'");

    return cfg;
}

} // namespace clearuq
