// clear-uq: run CLEAR calibration experiments from a JSON config.
//
//   clear-uq simulate  --config sim.json   --out results/
//   clear-uq benchmark --config bench.json --out results/
//   clear-uq calibrate --config cal.json   --out results/
//
// simulate  writes metrics.csv, conditional_coverage.csv, fits.jsonl
// benchmark writes metrics.csv, fits.jsonl
// calibrate writes fits.jsonl, intervals.csv

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "clearuq/config.hpp"
#include "clearuq/io.hpp"
#include "clearuq/runner.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::string conformal_mode; // optional override of config conformal.mode
    std::uint64_t seed_offset = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", args.out_dir, "output directory (created if missing)")->required();
    cmd->add_option("--mode", args.conformal_mode,
                    "override conformal mode: reuse_val or conformalized");
    cmd->add_option("--seed-offset", args.seed_offset,
                    "shift every replicate seed, for disjoint reruns");
}

clearuq::ExperimentConfig load(const CommonArgs& args, clearuq::RunMode mode) {
    nlohmann::json j = clearuq::load_config_json(args.config_path);
    clearuq::ExperimentConfig cfg = clearuq::parse_config(j, mode, args.seed_offset);
    if (!args.conformal_mode.empty()) {
        if (args.conformal_mode == "reuse_val")
            cfg.clear_mode = clearuq::ClearMode::reuse_val;
        else if (args.conformal_mode == "conformalized")
            cfg.clear_mode = clearuq::ClearMode::conformalized;
        else
            throw std::invalid_argument("--mode must be reuse_val or conformalized");
    }
    return cfg;
}

std::string out_path(const CommonArgs& args, const char* file) {
    return (std::filesystem::path(args.out_dir) / file).string();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CLEAR: two-parameter conformal calibration of aleatoric and epistemic "
                 "uncertainty"};
    app.require_subcommand(1);

    CommonArgs sim_args, bench_args, cal_args;
    CLI::App* sim = app.add_subcommand("simulate", "synthetic replicates with oracle diagnostics");
    add_common(sim, sim_args);
    CLI::App* bench = app.add_subcommand("benchmark", "CSV datasets, per-(dataset,seed) cells");
    add_common(bench, bench_args);
    CLI::App* cal = app.add_subcommand("calibrate", "fit CLEAR on precomputed components");
    add_common(cal, cal_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) {
            const clearuq::ExperimentConfig cfg = load(sim_args, clearuq::RunMode::simulate);
            std::filesystem::create_directories(sim_args.out_dir);
            const clearuq::RunResult res = clearuq::run_simulate(cfg);
            clearuq::write_metrics_csv(out_path(sim_args, "metrics.csv"), res.metrics);
            clearuq::write_conditional_csv(out_path(sim_args, "conditional_coverage.csv"),
                                           res.conditional);
            clearuq::write_fits_jsonl(out_path(sim_args, "fits.jsonl"), res.fits);
        } else if (bench->parsed()) {
            const clearuq::ExperimentConfig cfg = load(bench_args, clearuq::RunMode::benchmark);
            std::filesystem::create_directories(bench_args.out_dir);
            const clearuq::RunResult res = clearuq::run_benchmark(cfg);
            clearuq::write_metrics_csv(out_path(bench_args, "metrics.csv"), res.metrics);
            clearuq::write_fits_jsonl(out_path(bench_args, "fits.jsonl"), res.fits);
            if (!res.failures.empty()) {
                for (const std::string& f : res.failures)
                    std::cerr << "cell failed: " << f << "\n";
                std::cerr << res.failures.size() << " cell(s) failed\n";
                return 1;
            }
        } else {
            const clearuq::ExperimentConfig cfg = load(cal_args, clearuq::RunMode::calibrate);
            std::filesystem::create_directories(cal_args.out_dir);
            const clearuq::CalibrateResult res = clearuq::run_calibrate(cfg);
            clearuq::write_fits_jsonl(out_path(cal_args, "fits.jsonl"),
                                      {clearuq::FitRecord{res.dataset, cfg.seeds.front(), res.fit,
                                                          res.lambda1_val_quantile_loss}});
            clearuq::write_intervals_csv(out_path(cal_args, "intervals.csv"), res.intervals);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
