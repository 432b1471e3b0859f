#include <doctest.h>

#include <filesystem>

#include "gapfind/cli.hpp"
#include "support.hpp"

using namespace gapfind;
using namespace testsupport;

namespace {

const char* kTinyConfig = R"({
  "seed": 7,
  "market": { "n_designs": 8, "n_consumers": 150, "true_latent_dim": 2, "consumer_dim": 4,
              "real_blocks": 3, "binary_blocks": 2, "categorical_blocks": 2,
              "categorical_cardinality": 3, "taste_scale": 0.3,
              "gap_center": [2.0, 2.0], "gap_radius": 0.4, "gap_designs": 2 },
  "model": { "latent_dim": 3, "encoder_hidden": [12], "decoder_hidden": [12],
             "embedder_hidden": [12], "epochs": 4, "batch_size": 16 },
  "gaps": { "n_candidates": 12, "importance_samples": 16 },
  "experiment": { "seeds": 1 }
})";

std::filesystem::path tiny_config_file(const std::filesystem::path& dir) {
    const auto path = dir / "tiny.json";
    write_file(path, kTinyConfig);
    return path;
}

// Recursive byte comparison of two directory trees.
bool trees_identical(const std::filesystem::path& a, const std::filesystem::path& b) {
    std::vector<std::filesystem::path> rel_a, rel_b;
    for (auto& p : std::filesystem::recursive_directory_iterator(a))
        if (p.is_regular_file()) rel_a.push_back(std::filesystem::relative(p.path(), a));
    for (auto& p : std::filesystem::recursive_directory_iterator(b))
        if (p.is_regular_file()) rel_b.push_back(std::filesystem::relative(p.path(), b));
    std::sort(rel_a.begin(), rel_a.end());
    std::sort(rel_b.begin(), rel_b.end());
    if (rel_a != rel_b) return false;
    for (const auto& rel : rel_a)
        if (read_file(a / rel) != read_file(b / rel)) return false;
    return true;
}

}  // namespace

TEST_CASE("config parsing: defaults, overrides and canonical round trip") {
    RunConfig cfg = parse_run_config_json(kTinyConfig);
    CHECK(cfg.seed == 7);
    CHECK(cfg.market.n_designs == 8);
    CHECK(cfg.model.latent_dim == 3);
    CHECK(cfg.gaps.n_candidates == 12);
    CHECK(!cfg.gamma1_set);

    // canonical json reparses to the same canonical form
    const RunConfig again = parse_run_config_json(cfg.canonical_json());
    CHECK(again.canonical_json() == cfg.canonical_json());
    CHECK(again.hash() == cfg.hash());
}

TEST_CASE("config parsing rejects unknown keys") {
    CHECK_THROWS_WITH_AS(parse_run_config_json(R"({"market": {"bogus": 1}})"),
                         doctest::Contains("unknown key 'bogus'"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_run_config_json(R"({"typo_section": {}})"),
                         doctest::Contains("unknown key"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config_json("not json"), std::invalid_argument);
}

TEST_CASE("cli: gen then train produces a checkpoint and a training log") {
    const auto dir = fresh_dir("cli_happy");
    const auto cfg = tiny_config_file(dir);
    const auto market_dir = dir / "market";
    const auto run_dir = dir / "run";

    CHECK(cli::run({"gen", "--config", cfg.string(), "--out-dir", market_dir.string()}) == 0);
    CHECK(std::filesystem::exists(market_dir / "manifest"));
    CHECK(std::filesystem::exists(market_dir / "designs.tsv"));
    CHECK(std::filesystem::exists(market_dir / "gap_ids.tsv"));

    CHECK(cli::run({"train", "--manifest", (market_dir / "manifest").string(), "--config",
                    cfg.string(), "--out-dir", run_dir.string()}) == 0);
    CHECK(std::filesystem::exists(run_dir / "checkpoint.bin"));
    CHECK(std::filesystem::exists(run_dir / "train_log.tsv"));
    const std::string log = read_file(run_dir / "train_log.tsv");
    CHECK(log.find("epoch\tloss") != std::string::npos);

    // eval against the same market
    const auto eval_dir = dir / "eval";
    CHECK(cli::run({"eval", "--manifest", (market_dir / "manifest").string(), "--checkpoint",
                    (run_dir / "checkpoint.bin").string(), "--config", cfg.string(), "--out-dir",
                    eval_dir.string()}) == 0);
    CHECK(std::filesystem::exists(eval_dir / "report_choice.tsv"));
    CHECK(std::filesystem::exists(eval_dir / "report_feasibility.tsv"));

    // gap sampling with explicit holdouts and thresholds
    const auto gaps_dir = dir / "gaps";
    CHECK(cli::run({"gaps", "--manifest", (market_dir / "manifest").string(), "--checkpoint",
                    (run_dir / "checkpoint.bin").string(), "--config", cfg.string(), "--out-dir",
                    gaps_dir.string(), "--holdout-ids", "7", "--val-holdout-ids", "6",
                    "--n-candidates", "10", "--early-termination", "--consumer-subset", "20"}) == 0);
    CHECK(std::filesystem::exists(gaps_dir / "candidates.tsv"));
    const std::string cands = read_file(gaps_dir / "candidates.tsv");
    CHECK(cands.find("index\tstatus") != std::string::npos);
}

TEST_CASE("cli: missing required --manifest exits 1") {
    CHECK(cli::run({"train"}) == 1);
    CHECK(cli::run({"train", "--out-dir", "/tmp/nowhere"}) == 1);
}

TEST_CASE("cli: unknown subcommand or flag exits 1") {
    CHECK(cli::run({"frobnicate"}) == 1);
    CHECK(cli::run({"gen", "--config", "x.json", "--bogus-flag", "1"}) == 1);
}

TEST_CASE("cli: help exits 0") {
    CHECK(cli::run({"--help"}) == 0);
}

TEST_CASE("cli: bad config file exits 1") {
    const auto dir = fresh_dir("cli_badcfg");
    write_file(dir / "bad.json", R"({"market": {"bogus": 1}})");
    CHECK(cli::run({"gen", "--config", (dir / "bad.json").string(), "--out-dir",
                    (dir / "out").string()}) == 1);
}

TEST_CASE("cli: gradcheck passes") {
    CHECK(cli::run({"gradcheck", "--seed", "5"}) == 0);
}

TEST_CASE("experiment: twice with the same config and seed is byte-identical") {
    const auto dir = fresh_dir("cli_exp");
    const auto cfg = tiny_config_file(dir);
    const auto out1 = dir / "exp1";
    const auto out2 = dir / "exp2";
    CHECK(cli::run({"experiment", "--config", cfg.string(), "--out-dir", out1.string()}) == 0);
    CHECK(cli::run({"experiment", "--config", cfg.string(), "--out-dir", out2.string()}) == 0);
    CHECK(std::filesystem::exists(out1 / "report_choice.tsv"));
    CHECK(std::filesystem::exists(out1 / "report_gap.tsv"));
    CHECK(std::filesystem::exists(out1 / "rho2_histogram.tsv"));
    CHECK(std::filesystem::exists(out1 / "seed_0" / "checkpoint.bin"));
    CHECK(std::filesystem::exists(out1 / "seed_0" / "candidates.tsv"));
    CHECK(trees_identical(out1, out2));
}

TEST_CASE("experiment: two seeds produce std-dev columns") {
    const auto dir = fresh_dir("cli_exp_seeds");
    RunConfig cfg = parse_run_config_json(kTinyConfig);
    cfg.experiment_seeds = 2;
    cfg.model.epochs = 2;
    cfg.market.n_consumers = 80;
    const auto bundle = run_experiment(cfg, dir / "out");
    CHECK(bundle.choice.seed_values("top1_existing").size() == 2);
    CHECK(bundle.choice.stddev("top1_existing") >= 0.0);
    const std::string tsv = read_file(dir / "out" / "report_choice.tsv");
    CHECK(tsv.find("top1_existing") != std::string::npos);
}

TEST_CASE("experiment: no planted gaps degenerates to pure choice validation") {
    const auto dir = fresh_dir("cli_exp_nogap");
    RunConfig cfg = parse_run_config_json(kTinyConfig);
    cfg.market.gap.n_designs = 0;
    cfg.market.gap.center.clear();
    cfg.model.epochs = 2;
    const auto bundle = run_experiment(cfg, dir / "out");
    CHECK(!bundle.has_gaps);
    CHECK(std::filesystem::exists(dir / "out" / "report_choice.tsv"));
    CHECK(!std::filesystem::exists(dir / "out" / "report_gap.tsv"));
}

TEST_CASE("experiment: low choice floor flags every report but stages still run") {
    const auto dir = fresh_dir("cli_exp_floor");
    RunConfig cfg = parse_run_config_json(kTinyConfig);
    cfg.model.epochs = 1;
    cfg.choice_floor_top1 = 0.999;  // unreachable
    const auto bundle = run_experiment(cfg, dir / "out");
    CHECK(bundle.below_choice_floor);
    CHECK(bundle.choice.flagged);
    CHECK(bundle.gap.flagged);
    // stage 3 ran regardless
    CHECK(std::filesystem::exists(dir / "out" / "seed_0" / "candidates.tsv"));
    const std::string tsv = read_file(dir / "out" / "report_gap.tsv");
    CHECK(tsv.find("# flag=choice model below floor") != std::string::npos);
}
