#include "gapfind/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "gapfind/mathutil.hpp"

namespace gapfind {

namespace {

using nlohmann::json;

void reject_unknown(const json& section, const std::string& name,
                    const std::vector<std::string>& known) {
    for (const auto& [key, _] : section.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw std::invalid_argument("unknown key '" + key + "' in config section '" + name + "'");
}

template <typename T>
void maybe(const json& j, const std::string& key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig parse_run_config_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
    }
    reject_unknown(j, "(top level)", {"seed", "market", "split", "model", "gaps", "experiment"});

    RunConfig cfg;
    maybe(j, "seed", cfg.seed);

    if (j.contains("market")) {
        const json& m = j.at("market");
        reject_unknown(m, "market",
                       {"n_designs", "n_consumers", "true_latent_dim", "consumer_dim", "real_blocks",
                        "binary_blocks", "categorical_blocks", "categorical_cardinality", "n_clusters",
                        "cluster_spread", "cluster_radius", "taste_scale", "emission_noise",
                        "consumer_noise", "gap_center", "gap_radius", "gap_designs"});
        maybe(m, "n_designs", cfg.market.n_designs);
        maybe(m, "n_consumers", cfg.market.n_consumers);
        maybe(m, "true_latent_dim", cfg.market.true_latent_dim);
        maybe(m, "consumer_dim", cfg.market.consumer_dim);
        maybe(m, "real_blocks", cfg.market.real_blocks);
        maybe(m, "binary_blocks", cfg.market.binary_blocks);
        maybe(m, "categorical_blocks", cfg.market.categorical_blocks);
        maybe(m, "categorical_cardinality", cfg.market.categorical_cardinality);
        maybe(m, "n_clusters", cfg.market.n_clusters);
        maybe(m, "cluster_spread", cfg.market.cluster_spread);
        maybe(m, "cluster_radius", cfg.market.cluster_radius);
        maybe(m, "taste_scale", cfg.market.taste_scale);
        maybe(m, "emission_noise", cfg.market.emission_noise);
        maybe(m, "consumer_noise", cfg.market.consumer_noise);
        maybe(m, "gap_center", cfg.market.gap.center);
        maybe(m, "gap_radius", cfg.market.gap.radius);
        maybe(m, "gap_designs", cfg.market.gap.n_designs);
    }
    if (j.contains("split")) {
        const json& s = j.at("split");
        reject_unknown(s, "split", {"train_fraction", "val_fraction", "test_fraction"});
        maybe(s, "train_fraction", cfg.train_fraction);
        maybe(s, "val_fraction", cfg.val_fraction);
        maybe(s, "test_fraction", cfg.test_fraction);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown(m, "model",
                       {"latent_dim", "encoder_hidden", "decoder_hidden", "embedder_hidden",
                        "activation", "kl_weight", "mc_samples", "optimizer", "lr", "lr_encoder",
                        "lr_decoder", "lr_embedder", "freeze", "epochs", "batch_size", "sigma_floor"});
        maybe(m, "latent_dim", cfg.model.latent_dim);
        maybe(m, "encoder_hidden", cfg.model.encoder_hidden);
        maybe(m, "decoder_hidden", cfg.model.decoder_hidden);
        maybe(m, "embedder_hidden", cfg.model.embedder_hidden);
        maybe(m, "activation", cfg.model.activation);
        maybe(m, "kl_weight", cfg.model.kl_weight);
        maybe(m, "mc_samples", cfg.model.mc_samples);
        maybe(m, "optimizer", cfg.model.optimizer);
        maybe(m, "lr", cfg.model.lr);
        maybe(m, "lr_encoder", cfg.model.lr_encoder);
        maybe(m, "lr_decoder", cfg.model.lr_decoder);
        maybe(m, "lr_embedder", cfg.model.lr_embedder);
        maybe(m, "freeze", cfg.model.freeze);
        maybe(m, "epochs", cfg.model.epochs);
        maybe(m, "batch_size", cfg.model.batch_size);
        maybe(m, "sigma_floor", cfg.model.sigma_floor);
    }
    if (j.contains("gaps")) {
        const json& g = j.at("gaps");
        reject_unknown(g, "gaps",
                       {"gamma1", "gamma2", "gamma_s", "consumer_subset", "n_candidates",
                        "importance_samples", "baseline", "early_termination", "gamma1_percentile",
                        "gamma2_percentile", "calibration_candidates"});
        if (g.contains("gamma1")) {
            cfg.gaps.gamma1 = g.at("gamma1").get<double>();
            cfg.gamma1_set = true;
        }
        if (g.contains("gamma2")) {
            cfg.gaps.gamma2 = g.at("gamma2").get<double>();
            cfg.gamma2_set = true;
        }
        if (g.contains("gamma_s")) {
            cfg.gaps.gamma_s = g.at("gamma_s").get<double>();
            cfg.gamma_s_set = true;
        }
        maybe(g, "consumer_subset", cfg.gaps.consumer_subset);
        maybe(g, "n_candidates", cfg.gaps.n_candidates);
        maybe(g, "importance_samples", cfg.gaps.importance_samples);
        if (g.contains("baseline")) {
            const std::string b = g.at("baseline").get<std::string>();
            if (b == "uniform") cfg.gaps.baseline = BaselineKind::Uniform;
            else if (b == "share") cfg.gaps.baseline = BaselineKind::MarketShare;
            else throw std::invalid_argument("baseline must be 'uniform' or 'share'");
        }
        maybe(g, "early_termination", cfg.gaps.early_termination);
        maybe(g, "gamma1_percentile", cfg.gaps.gamma1_percentile);
        maybe(g, "gamma2_percentile", cfg.gaps.gamma2_percentile);
        maybe(g, "calibration_candidates", cfg.gaps.calibration_candidates);
    }
    if (j.contains("experiment")) {
        const json& e = j.at("experiment");
        reject_unknown(e, "experiment", {"seeds", "choice_floor_top1"});
        maybe(e, "seeds", cfg.experiment_seeds);
        maybe(e, "choice_floor_top1", cfg.choice_floor_top1);
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config_json(ss.str());
}

std::string RunConfig::canonical_json() const {
    json j;
    j["seed"] = seed;
    json& m = j["market"];
    m["n_designs"] = market.n_designs;
    m["n_consumers"] = market.n_consumers;
    m["true_latent_dim"] = market.true_latent_dim;
    m["consumer_dim"] = market.consumer_dim;
    m["real_blocks"] = market.real_blocks;
    m["binary_blocks"] = market.binary_blocks;
    m["categorical_blocks"] = market.categorical_blocks;
    m["categorical_cardinality"] = market.categorical_cardinality;
    m["n_clusters"] = market.n_clusters;
    m["cluster_spread"] = market.cluster_spread;
    m["cluster_radius"] = market.cluster_radius;
    m["taste_scale"] = market.taste_scale;
    m["emission_noise"] = market.emission_noise;
    m["consumer_noise"] = market.consumer_noise;
    m["gap_center"] = market.gap.center;
    m["gap_radius"] = market.gap.radius;
    m["gap_designs"] = market.gap.n_designs;
    json& s = j["split"];
    s["train_fraction"] = train_fraction;
    s["val_fraction"] = val_fraction;
    s["test_fraction"] = test_fraction;
    json& mo = j["model"];
    mo["latent_dim"] = model.latent_dim;
    mo["encoder_hidden"] = model.encoder_hidden;
    mo["decoder_hidden"] = model.decoder_hidden;
    mo["embedder_hidden"] = model.embedder_hidden;
    mo["activation"] = model.activation;
    mo["kl_weight"] = model.kl_weight;
    mo["mc_samples"] = model.mc_samples;
    mo["optimizer"] = model.optimizer;
    mo["lr"] = model.lr;
    mo["lr_encoder"] = model.lr_encoder;
    mo["lr_decoder"] = model.lr_decoder;
    mo["lr_embedder"] = model.lr_embedder;
    mo["freeze"] = model.freeze;
    mo["epochs"] = model.epochs;
    mo["batch_size"] = model.batch_size;
    mo["sigma_floor"] = model.sigma_floor;
    json& g = j["gaps"];
    if (gamma1_set) g["gamma1"] = gaps.gamma1;
    if (gamma2_set) g["gamma2"] = gaps.gamma2;
    if (gamma_s_set) g["gamma_s"] = gaps.gamma_s;
    g["consumer_subset"] = gaps.consumer_subset;
    g["n_candidates"] = gaps.n_candidates;
    g["importance_samples"] = gaps.importance_samples;
    g["baseline"] = gaps.baseline == BaselineKind::Uniform ? "uniform" : "share";
    g["early_termination"] = gaps.early_termination;
    g["gamma1_percentile"] = gaps.gamma1_percentile;
    g["gamma2_percentile"] = gaps.gamma2_percentile;
    g["calibration_candidates"] = gaps.calibration_candidates;
    json& e = j["experiment"];
    e["seeds"] = experiment_seeds;
    e["choice_floor_top1"] = choice_floor_top1;
    return j.dump(2) + "\n";
}

uint64_t RunConfig::hash() const {
    uint64_t h = 1469598103934665603ULL;
    for (char c : canonical_json()) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

std::vector<ChoiceEvent> gap_purchase_events(const Dataset& gap_pool) {
    std::vector<ChoiceEvent> out;
    for (const auto& e : gap_pool.events)
        if (gap_pool.has_design(e.chosen_design_id)) out.push_back(e);
    return out;
}

}  // namespace

SeedRun run_seed(const RunConfig& cfg, uint64_t seed) {
    SeedRun r;
    r.seed = seed;

    MarketConfig mcfg = cfg.market;
    mcfg.seed = derive_seed(seed, 1);
    mcfg.validate();
    r.market = gen_synthetic_market(mcfg);
    r.has_gaps = mcfg.gap.n_designs > 0;

    SplitSpec spec;
    spec.seed = derive_seed(seed, 2);
    spec.train_fraction = cfg.train_fraction;
    spec.val_fraction = cfg.val_fraction;
    spec.test_fraction = cfg.test_fraction;
    if (r.has_gaps) {
        r.plant = plant_gap(r.market.dataset, r.market.truth, mcfg);
        spec.val_gap_ids = r.plant.spec.val_gap_ids;
        spec.test_gap_ids = r.plant.spec.test_gap_ids;
    }

    Splits raw = split_dataset(r.market.dataset, spec);
    r.normalizer = fit_normalizer(raw.train);
    r.splits = raw;
    apply_normalizer(r.normalizer, r.splits);

    ModelConfig model_cfg = cfg.model;
    model_cfg.seed = derive_seed(seed, 3);
    r.training = train(r.splits, model_cfg);
    if (r.training.diverged)
        throw NumericalError("training diverged: " + r.training.divergence_reason);
    const ModelParams& params = r.training.params;

    // Stage 1: choice model validation.
    r.top1_existing = topk_accuracy(params, r.splits.test, r.splits.test.events, 1, CatalogMode::Existing);
    r.top5_existing = topk_accuracy(params, r.splits.test, r.splits.test.events, 5, CatalogMode::Existing);
    if (r.has_gaps) {
        const auto insertion_events = gap_purchase_events(r.splits.gap_test);
        if (!insertion_events.empty()) {
            r.top1_insertion =
                topk_accuracy(params, r.splits.gap_test, insertion_events, 1, CatalogMode::Insertion);
            r.top5_insertion =
                topk_accuracy(params, r.splits.gap_test, insertion_events, 5, CatalogMode::Insertion);
        }
    }

    // Stage 2: design constraint model validation.
    r.feasibility = feasibility_eval(params, r.splits.train.designs, r.splits.gap_test.designs,
                                     cfg.gaps.importance_samples, derive_seed(seed, 5));

    // Stage 3: design gap prediction.
    if (r.has_gaps) {
        GapConfig gcfg = cfg.gaps;
        gcfg.seed = derive_seed(seed, 4);
        r.thresholds = calibrate_thresholds(params, r.splits, gcfg);
        gcfg.gamma1 = cfg.gamma1_set ? cfg.gaps.gamma1 : r.thresholds.gamma1;
        gcfg.gamma2 = cfg.gamma2_set ? cfg.gaps.gamma2 : r.thresholds.gamma2;
        gcfg.gamma_s = cfg.gamma_s_set ? cfg.gaps.gamma_s : r.thresholds.gamma_s;
        r.gap_cfg_resolved = gcfg;

        r.samples = sample_gap_candidates(params, r.splits.train, gcfg);
        r.gap_metrics = gap_eval(params, r.samples, r.splits.gap_test.designs);

        RhoContext ctx = make_rho_context(params, r.splits.gap_test.consumers, gcfg.baseline,
                                          static_cast<long>(r.splits.train.events.size()));
        for (const auto& gap : r.splits.gap_test.designs) {
            DeltaPurchasers purchasers;
            for (long row = 0; row < static_cast<long>(r.splits.gap_test.consumers.size()); ++row) {
                const int cid = r.splits.gap_test.consumers[static_cast<size_t>(row)].consumer_id;
                for (const auto& e : r.splits.gap_test.events)
                    if (e.consumer_id == cid && e.chosen_design_id == gap.design_id) {
                        purchasers.consumer_rows.push_back(row);
                        break;
                    }
            }
            const auto enc = encode_design(params, gap);
            try {
                r.induced_rho2.push_back(rho_squared(ctx, enc.mu, purchasers).value);
            } catch (const RhoUndefinedError&) {
                r.induced_rho2.push_back(0.0);
            }
        }
        for (const auto& c : r.samples.candidates)
            if (c.status != GapCandidate::Status::RejectedFeasibility && c.rho2)
                r.sampled_rho2.push_back(*c.rho2);
    }
    return r;
}

ExperimentBundle run_experiment(const RunConfig& cfg, const std::filesystem::path& out_dir) {
    if (cfg.experiment_seeds < 1) throw std::invalid_argument("experiment needs at least one seed");
    std::filesystem::create_directories(out_dir);
    {
        std::ofstream out(out_dir / "resolved_config.json");
        out << cfg.canonical_json();
    }

    ExperimentBundle bundle;
    bundle.choice.stage = "choice";
    bundle.feasibility.stage = "feasibility";
    bundle.gap.stage = "gap";
    bundle.choice.config_hash = bundle.feasibility.config_hash = bundle.gap.config_hash = cfg.hash();

    std::vector<double> pooled_induced, pooled_sampled;
    for (int i = 0; i < cfg.experiment_seeds; ++i) {
        const uint64_t seed = derive_seed(cfg.seed, static_cast<uint64_t>(i));
        SeedRun r = run_seed(cfg, seed);
        bundle.has_gaps = r.has_gaps;

        const auto seed_dir = out_dir / ("seed_" + std::to_string(i));
        save_dataset(r.market.dataset, seed_dir / "market");
        checkpoint_save(r.training.params, seed_dir / "checkpoint.bin");
        {
            std::ofstream out(seed_dir / "train_log.tsv");
            out << train_log_tsv(r.training.log);
        }
        if (r.has_gaps) {
            std::ofstream out(seed_dir / "candidates.tsv");
            out << r.samples.report_tsv(r.gap_cfg_resolved);
        }

        const long d_heldin = static_cast<long>(r.splits.train.designs.size());
        bundle.choice.add("top1_existing", r.top1_existing);
        bundle.choice.add("top5_existing", r.top5_existing);
        bundle.choice.add("random_top1_existing", 1.0 / static_cast<double>(d_heldin));
        if (r.has_gaps) {
            bundle.choice.add("top1_insertion", r.top1_insertion);
            bundle.choice.add("top5_insertion", r.top5_insertion);
            bundle.choice.add("random_top1_insertion", 1.0 / static_cast<double>(d_heldin + 1));
        }
        bundle.feasibility.add("heldin_mean_nll", r.feasibility.heldin_mean);
        if (r.has_gaps) bundle.feasibility.add("heldout_mean_nll", r.feasibility.heldout_mean);
        if (r.has_gaps) {
            bundle.gap.add("msqe_accepted", r.gap_metrics.msqe_accepted);
            bundle.gap.add("msqe_random", r.gap_metrics.msqe_random);
            bundle.gap.add("n_accepted", static_cast<double>(r.gap_metrics.n_accepted));
            bundle.gap.add("n_random", static_cast<double>(r.gap_metrics.n_random));
            bundle.gap.add("induced_rho2_mean", mean_of(r.induced_rho2));
            bundle.gap.add("sampled_rho2_mean", mean_of(r.sampled_rho2));
            bundle.gap.add("gamma1", r.gap_cfg_resolved.gamma1);
            bundle.gap.add("gamma2", r.gap_cfg_resolved.gamma2);
            pooled_induced.insert(pooled_induced.end(), r.induced_rho2.begin(), r.induced_rho2.end());
            pooled_sampled.insert(pooled_sampled.end(), r.sampled_rho2.begin(), r.sampled_rho2.end());
        }
        bundle.seeds.push_back(std::move(r));
    }

    bundle.below_choice_floor = bundle.choice.mean("top1_existing") < cfg.choice_floor_top1;
    if (bundle.below_choice_floor) {
        const char* reason = "choice model below floor";
        bundle.choice.flagged = bundle.feasibility.flagged = bundle.gap.flagged = true;
        bundle.choice.flag_reason = bundle.feasibility.flag_reason = bundle.gap.flag_reason = reason;
    }

    {
        std::ofstream out(out_dir / "report_choice.tsv");
        out << bundle.choice.to_tsv();
    }
    {
        std::ofstream out(out_dir / "report_feasibility.tsv");
        out << bundle.feasibility.to_tsv();
    }
    if (bundle.has_gaps) {
        bundle.histogram = rho2_histogram(pooled_induced, pooled_sampled);
        std::ofstream out(out_dir / "report_gap.tsv");
        out << bundle.gap.to_tsv();
        std::ofstream hist(out_dir / "rho2_histogram.tsv");
        hist << bundle.histogram.to_tsv();
    }
    return bundle;
}

namespace cli {

namespace {

std::vector<int> parse_id_list(const std::string& s) {
    std::vector<int> out;
    if (s.empty()) return out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ','))
        if (!tok.empty()) out.push_back(std::stoi(tok));
    return out;
}

struct CommonArgs {
    std::string manifest;
    std::string checkpoint;
    std::string out_dir = "run";
    std::string config;
    uint64_t seed = 1;
    bool seed_given = false;
    std::string holdout_ids;
    std::string val_holdout_ids;
};

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig cfg;
    if (!args.config.empty()) cfg = load_run_config(args.config);
    if (args.seed_given) cfg.seed = args.seed;
    return cfg;
}

SplitSpec make_split_spec(const RunConfig& cfg, const CommonArgs& args) {
    SplitSpec spec;
    spec.seed = derive_seed(cfg.seed, 2);
    spec.train_fraction = cfg.train_fraction;
    spec.val_fraction = cfg.val_fraction;
    spec.test_fraction = cfg.test_fraction;
    spec.val_gap_ids = parse_id_list(args.val_holdout_ids);
    spec.test_gap_ids = parse_id_list(args.holdout_ids);
    return spec;
}

void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::ofstream out(out_dir / "resolved_config.json");
    out << cfg.canonical_json();
}

int cmd_gen(const CommonArgs& args) {
    RunConfig cfg = resolve_config(args);
    MarketConfig mcfg = cfg.market;
    mcfg.seed = cfg.seed;
    mcfg.validate();
    const auto market = gen_synthetic_market(mcfg);
    const std::filesystem::path out_dir(args.out_dir);
    save_dataset(market.dataset, out_dir);
    write_resolved_config(cfg, out_dir);

    if (mcfg.gap.n_designs > 0) {
        const auto plant = plant_gap(market.dataset, market.truth, mcfg);
        std::ofstream out(out_dir / "gap_ids.tsv");
        out << "pool\tdesign_ids\n";
        auto join = [](const std::vector<int>& ids) {
            std::string s;
            for (size_t i = 0; i < ids.size(); ++i) s += (i ? "," : "") + std::to_string(ids[i]);
            return s;
        };
        out << "validation\t" << join(plant.spec.val_gap_ids) << "\n";
        out << "test\t" << join(plant.spec.test_gap_ids) << "\n";
        std::cout << "planted " << mcfg.gap.n_designs << " gap designs; purchasers: "
                  << plant.purchaser_count << "\n";
    }
    std::cout << "market written to " << out_dir.string() << " (" << market.dataset.designs.size()
              << " designs, " << market.dataset.consumers.size() << " consumers, "
              << market.dataset.events.size() << " events)\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    RunConfig cfg = resolve_config(args);
    const Dataset ds = load_dataset(args.manifest);
    const SplitSpec spec = make_split_spec(cfg, args);
    Splits splits = split_dataset(ds, spec);
    const Normalizer nrm = fit_normalizer(splits.train);
    apply_normalizer(nrm, splits);

    ModelConfig model_cfg = cfg.model;
    model_cfg.seed = derive_seed(cfg.seed, 3);
    const TrainResult result = train(splits, model_cfg);

    const std::filesystem::path out_dir(args.out_dir);
    write_resolved_config(cfg, out_dir);
    checkpoint_save(result.params, out_dir / "checkpoint.bin");
    {
        std::ofstream out(out_dir / "train_log.tsv");
        out << train_log_tsv(result.log);
    }
    for (const auto& w : nrm.warnings) std::cerr << "warning: " << w << "\n";
    if (result.diverged) {
        std::cerr << "training diverged (" << result.divergence_reason
                  << "); checkpoint holds the last good parameters\n";
        return 2;
    }
    std::cout << "trained " << result.log.size() << " epochs; best val top1 " << result.best_val_top1
              << " at epoch " << result.best_epoch << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    RunConfig cfg = resolve_config(args);
    const Dataset ds = load_dataset(args.manifest);
    const SplitSpec spec = make_split_spec(cfg, args);
    Splits splits = split_dataset(ds, spec);
    const Normalizer nrm = fit_normalizer(splits.train);
    apply_normalizer(nrm, splits);
    const ModelParams params = checkpoint_load(args.checkpoint);
    if (params.schema.hash() != ds.schema.hash())
        throw std::invalid_argument("checkpoint schema does not match the dataset");

    EvalReport choice;
    choice.stage = "choice";
    choice.config_hash = cfg.hash();
    choice.add("top1_existing", topk_accuracy(params, splits.test, splits.test.events, 1,
                                              CatalogMode::Existing));
    choice.add("top5_existing", topk_accuracy(params, splits.test, splits.test.events, 5,
                                              CatalogMode::Existing));
    const auto insertion_events = gap_purchase_events(splits.gap_test);
    if (!insertion_events.empty()) {
        choice.add("top1_insertion",
                   topk_accuracy(params, splits.gap_test, insertion_events, 1, CatalogMode::Insertion));
        choice.add("top5_insertion",
                   topk_accuracy(params, splits.gap_test, insertion_events, 5, CatalogMode::Insertion));
    }

    EvalReport feas;
    feas.stage = "feasibility";
    feas.config_hash = cfg.hash();
    const auto fres = feasibility_eval(params, splits.train.designs, splits.gap_test.designs,
                                       cfg.gaps.importance_samples, derive_seed(cfg.seed, 5));
    feas.add("heldin_mean_nll", fres.heldin_mean);
    if (!splits.gap_test.designs.empty()) feas.add("heldout_mean_nll", fres.heldout_mean);

    const std::filesystem::path out_dir(args.out_dir);
    write_resolved_config(cfg, out_dir);
    {
        std::ofstream out(out_dir / "report_choice.tsv");
        out << choice.to_tsv();
    }
    {
        std::ofstream out(out_dir / "report_feasibility.tsv");
        out << feas.to_tsv();
    }
    std::cout << choice.to_tsv() << feas.to_tsv();
    return 0;
}

struct GapsFlags {
    std::optional<double> gamma1, gamma2, gamma_s;
    std::optional<int> n_candidates, consumer_subset, importance_samples;
    std::optional<bool> early_termination;
    std::optional<BaselineKind> baseline;
};

int cmd_gaps(const CommonArgs& args, const GapsFlags& flags) {
    RunConfig cfg = resolve_config(args);
    if (flags.gamma1) {
        cfg.gaps.gamma1 = *flags.gamma1;
        cfg.gamma1_set = true;
    }
    if (flags.gamma2) {
        cfg.gaps.gamma2 = *flags.gamma2;
        cfg.gamma2_set = true;
    }
    if (flags.gamma_s) {
        cfg.gaps.gamma_s = *flags.gamma_s;
        cfg.gamma_s_set = true;
    }
    if (flags.n_candidates) cfg.gaps.n_candidates = *flags.n_candidates;
    if (flags.consumer_subset) cfg.gaps.consumer_subset = *flags.consumer_subset;
    if (flags.importance_samples) cfg.gaps.importance_samples = *flags.importance_samples;
    if (flags.early_termination) cfg.gaps.early_termination = *flags.early_termination;
    if (flags.baseline) cfg.gaps.baseline = *flags.baseline;

    const Dataset ds = load_dataset(args.manifest);
    const SplitSpec spec = make_split_spec(cfg, args);
    Splits splits = split_dataset(ds, spec);
    const Normalizer nrm = fit_normalizer(splits.train);
    apply_normalizer(nrm, splits);
    const ModelParams params = checkpoint_load(args.checkpoint);
    if (params.schema.hash() != ds.schema.hash())
        throw std::invalid_argument("checkpoint schema does not match the dataset");

    GapConfig gcfg = cfg.gaps;
    gcfg.seed = derive_seed(cfg.seed, 4);
    if (!cfg.gamma1_set || !cfg.gamma2_set || (gcfg.early_termination && !cfg.gamma_s_set)) {
        const Thresholds th = calibrate_thresholds(params, splits, gcfg);
        if (!cfg.gamma1_set) gcfg.gamma1 = th.gamma1;
        if (!cfg.gamma2_set) gcfg.gamma2 = th.gamma2;
        if (!cfg.gamma_s_set) gcfg.gamma_s = th.gamma_s;
    }

    const SampleResult result = sample_gap_candidates(params, splits.train, gcfg);
    const std::filesystem::path out_dir(args.out_dir);
    write_resolved_config(cfg, out_dir);
    {
        std::ofstream out(out_dir / "candidates.tsv");
        out << result.report_tsv(gcfg);
    }
    std::cout << "examined " << result.candidates.size() << " candidates: " << result.accepted.size()
              << " accepted, " << result.n_feasibility_rejected << " feasibility-rejected, "
              << result.n_rho_rejected << " rho2-rejected (gamma1=" << gcfg.gamma1
              << ", gamma2=" << gcfg.gamma2 << ")\n";
    return 0;
}

int cmd_gradcheck(uint64_t seed) {
    // Small mixed-schema model; every ELBO parameter against central
    // differences.
    VariableSchema schema;
    schema.blocks.push_back({"r0", BlockKind::Real, 1, Channel::Objective});
    schema.blocks.push_back({"b0", BlockKind::Binary, 1, Channel::Subjective});
    schema.blocks.push_back({"c0", BlockKind::Categorical, 3, Channel::Objective});
    ModelConfig cfg;
    cfg.latent_dim = 4;
    cfg.encoder_hidden = {8};
    cfg.decoder_hidden = {8};
    cfg.embedder_hidden = {8};
    cfg.seed = seed;

    Dataset catalog;
    catalog.schema = schema;
    catalog.consumer_columns = {{"c0", BlockKind::Real, 1}, {"c1", BlockKind::Real, 1}};
    Rng rng(seed);
    for (int d = 0; d < 4; ++d) {
        DesignVector dv;
        dv.design_id = d;
        dv.values = {rng.normal(), static_cast<double>(rng.uniform_int(2)),
                     static_cast<double>(rng.uniform_int(3))};
        catalog.designs.push_back(dv);
    }
    for (int c = 0; c < 3; ++c)
        catalog.consumers.push_back({c, {rng.normal(), rng.normal()}});
    for (int c = 0; c < 3; ++c) catalog.events.push_back({c, rng.uniform_int(4)});
    catalog.rebuild_index();

    ModelParams params = init_params(schema, 2, cfg);
    refresh_latent_cache(params, catalog.designs);
    FixedZ z;
    for (const auto& d : catalog.designs) z[d.design_id] = rng.normal_vec(static_cast<size_t>(cfg.latent_dim));

    const auto report = elbo_grad_check(params, catalog, catalog.events, z);
    std::cout << report.summary();
    return report.pass ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"deep consumer-choice model with design-gap sampling"};
    app.require_subcommand(1);

    CommonArgs common;
    double opt_gamma1 = 0.0, opt_gamma2 = 0.0, opt_gamma_s = 0.0;
    int opt_n_candidates = 0, opt_consumer_subset = 0, opt_importance_samples = 0;
    bool opt_early = false;
    int seeds_override = -1;

    auto add_common = [&](CLI::App* sub, bool manifest, bool checkpoint) {
        if (manifest) sub->add_option("--manifest", common.manifest, "dataset manifest path")->required();
        if (checkpoint)
            sub->add_option("--checkpoint", common.checkpoint, "model checkpoint path")->required();
        sub->add_option("--out-dir", common.out_dir, "output directory");
        sub->add_option("--config", common.config, "JSON config file");
        sub->add_option("--seed", common.seed, "global seed (overrides config)")
            ->each([&](const std::string&) { common.seed_given = true; });
        sub->add_option("--holdout-ids", common.holdout_ids, "comma-separated test-gap design ids");
        sub->add_option("--val-holdout-ids", common.val_holdout_ids,
                        "comma-separated validation-gap design ids");
    };

    auto* gen = app.add_subcommand("gen", "generate a synthetic market");
    gen->add_option("--config", common.config, "JSON config file")->required();
    gen->add_option("--out-dir", common.out_dir, "output directory");
    gen->add_option("--seed", common.seed, "global seed (overrides config)")
        ->each([&](const std::string&) { common.seed_given = true; });

    auto* tr = app.add_subcommand("train", "train the choice model");
    add_common(tr, true, false);

    auto* ev = app.add_subcommand("eval", "choice and feasibility evaluation");
    add_common(ev, true, true);

    auto* gp = app.add_subcommand("gaps", "sample design-gap candidates");
    add_common(gp, true, true);
    gp->add_option("--gamma1", opt_gamma1, "feasibility NLL threshold");
    gp->add_option("--gamma2", opt_gamma2, "rho2 threshold");
    gp->add_option("--gamma-s", opt_gamma_s, "early-termination threshold");
    gp->add_option("--n-candidates", opt_n_candidates, "candidates to examine");
    gp->add_option("--consumer-subset", opt_consumer_subset, "subset size for early rho2");
    gp->add_option("--importance-samples", opt_importance_samples,
                   "importance samples for the marginal");
    gp->add_flag("--early-termination", opt_early, "enable subset pre-screening");
    std::string baseline;
    gp->add_option("--baseline", baseline, "rho2 baseline: uniform|share")
        ->check(CLI::IsMember({"uniform", "share"}));

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the ELBO gradients");
    gc->add_option("--seed", common.seed, "seed");

    auto* ex = app.add_subcommand("experiment", "full three-stage protocol on a synthetic market");
    ex->add_option("--config", common.config, "JSON config file")->required();
    ex->add_option("--out-dir", common.out_dir, "output directory");
    ex->add_option("--seeds", seeds_override, "number of seeds");
    ex->add_option("--seed", common.seed, "base seed (overrides config)")
        ->each([&](const std::string&) { common.seed_given = true; });

    std::vector<std::string> mutable_args(args.rbegin(), args.rend());
    try {
        app.parse(mutable_args);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (gen->parsed()) return cmd_gen(common);
        if (tr->parsed()) return cmd_train(common);
        if (ev->parsed()) return cmd_eval(common);
        if (gp->parsed()) {
            GapsFlags flags;
            if (gp->count("--gamma1")) flags.gamma1 = opt_gamma1;
            if (gp->count("--gamma2")) flags.gamma2 = opt_gamma2;
            if (gp->count("--gamma-s")) flags.gamma_s = opt_gamma_s;
            if (gp->count("--n-candidates")) flags.n_candidates = opt_n_candidates;
            if (gp->count("--consumer-subset")) flags.consumer_subset = opt_consumer_subset;
            if (gp->count("--importance-samples")) flags.importance_samples = opt_importance_samples;
            if (gp->count("--early-termination")) flags.early_termination = opt_early;
            if (gp->count("--baseline"))
                flags.baseline = baseline == "share" ? BaselineKind::MarketShare : BaselineKind::Uniform;
            return cmd_gaps(common, flags);
        }
        if (gc->parsed()) return cmd_gradcheck(common.seed);
        if (ex->parsed()) {
            RunConfig cfg = load_run_config(common.config);
            if (common.seed_given) cfg.seed = common.seed;
            if (seeds_override > 0) cfg.experiment_seeds = seeds_override;
            const auto bundle = run_experiment(cfg, common.out_dir);
            std::cout << bundle.choice.to_tsv() << "\n" << bundle.feasibility.to_tsv();
            if (bundle.has_gaps) std::cout << "\n" << bundle.gap.to_tsv();
            if (bundle.below_choice_floor) std::cout << "\nflag: choice model below floor\n";
            return 0;
        }
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace cli

}  // namespace gapfind
