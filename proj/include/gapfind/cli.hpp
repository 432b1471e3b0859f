#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gapfind/choice_vae.hpp"
#include "gapfind/evaluation.hpp"
#include "gapfind/gap_sampler.hpp"
#include "gapfind/synthetic.hpp"

namespace gapfind {

// Resolved configuration for one run: JSON config file sections plus flag
// overrides. Unknown keys are rejected.
struct RunConfig {
    uint64_t seed = 1;
    MarketConfig market;
    double train_fraction = 0.7;
    double val_fraction = 0.15;
    double test_fraction = 0.15;
    ModelConfig model;
    GapConfig gaps;
    int experiment_seeds = 3;
    double choice_floor_top1 = 0.15;

    // Explicit gamma values in the config/flags override calibration.
    bool gamma1_set = false;
    bool gamma2_set = false;
    bool gamma_s_set = false;

    std::string canonical_json() const;
    uint64_t hash() const;
};

RunConfig parse_run_config_json(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// One full protocol pass on a synthetic market for a single seed:
// gen -> split -> normalize -> train -> calibrate -> choice eval ->
// feasibility eval -> gap sampling -> gap eval. No file output.
struct SeedRun {
    uint64_t seed = 0;
    SyntheticMarket market;
    PlantReport plant;
    Splits splits;  // normalized
    Normalizer normalizer;
    TrainResult training;
    Thresholds thresholds;
    GapConfig gap_cfg_resolved;
    bool has_gaps = false;

    double top1_existing = 0.0, top5_existing = 0.0;
    double top1_insertion = 0.0, top5_insertion = 0.0;
    FeasibilityEvalResult feasibility;
    SampleResult samples;
    GapEvalResult gap_metrics;
    std::vector<double> induced_rho2;
    std::vector<double> sampled_rho2;
};

SeedRun run_seed(const RunConfig& cfg, uint64_t seed);

struct ExperimentBundle {
    EvalReport choice;
    EvalReport feasibility;
    EvalReport gap;
    Histogram histogram;
    bool has_gaps = false;
    bool below_choice_floor = false;
    std::vector<SeedRun> seeds;
};

ExperimentBundle run_experiment(const RunConfig& cfg, const std::filesystem::path& out_dir);

namespace cli {

// Exit codes: 0 success, 1 validation/usage error, 2 numerical failure.
int run(const std::vector<std::string>& args);

}  // namespace cli

}  // namespace gapfind
