#include <doctest.h>

#include <cmath>

#include "gapfind/evaluation.hpp"
#include "gapfind/gap_sampler.hpp"
#include "support.hpp"

using namespace gapfind;
using namespace testsupport;

namespace {

ModelParams model_for(const Dataset& catalog, int k, uint64_t seed) {
    ModelConfig cfg;
    cfg.latent_dim = k;
    cfg.encoder_hidden = {6};
    cfg.decoder_hidden = {6};
    cfg.embedder_hidden = {6};
    cfg.seed = seed;
    ModelParams params = init_params(catalog.schema, catalog.consumer_dim(), cfg);
    refresh_latent_cache(params, catalog.designs);
    return params;
}

}  // namespace

TEST_CASE("topk_accuracy: k equal to the catalog size is always 1") {
    auto catalog = tiny_catalog(mixed_schema(), 5, 20, 2, 11);
    ModelParams params = model_for(catalog, 2, 12);
    CHECK(topk_accuracy(params, catalog, catalog.events, 5, CatalogMode::Existing) == 1.0);
    CHECK(topk_accuracy(params, catalog, catalog.events, 50, CatalogMode::Existing) == 1.0);
}

TEST_CASE("topk_accuracy: uniform model over 297 designs scores the 0.34% random rate") {
    auto catalog = tiny_catalog(mixed_schema(), 297, 1, 2, 21);
    ModelParams params = model_for(catalog, 2, 22);
    // zero embedder -> all consumer embeddings 0 -> uniform choice probabilities
    for (auto& [name, t] : params.weights)
        if (param_group(name) == "emb") t.fill(0.0);

    Rng rng(23);
    std::vector<ChoiceEvent> events;
    for (int i = 0; i < 3000; ++i) events.push_back({0, rng.uniform_int(297)});
    const double acc = topk_accuracy(params, catalog, events, 1, CatalogMode::Existing);
    const double p = 1.0 / 297.0;
    const double se = std::sqrt(p * (1 - p) / 3000.0);
    CHECK(std::fabs(acc - p) <= 3.0 * se);

    const double acc5 = topk_accuracy(params, catalog, events, 5, CatalogMode::Existing);
    CHECK(acc5 >= acc);
    const double p5 = 5.0 / 297.0;
    const double se5 = std::sqrt(p5 * (1 - p5) / 3000.0);
    CHECK(std::fabs(acc5 - p5) <= 3.0 * se5);
}

TEST_CASE("topk_accuracy is monotone nondecreasing in k") {
    auto catalog = tiny_catalog(mixed_schema(4), 9, 40, 3, 31);
    ModelParams params = model_for(catalog, 3, 32);
    double prev = 0.0;
    for (int k = 1; k <= 9; ++k) {
        const double acc = topk_accuracy(params, catalog, catalog.events, k, CatalogMode::Existing);
        CHECK(acc >= prev);
        prev = acc;
    }
    CHECK(prev == 1.0);
}

TEST_CASE("topk_accuracy insertion mode ranks the held-out design in a D+1 set") {
    auto catalog = tiny_catalog(mixed_schema(), 6, 10, 2, 41);
    ModelParams params = model_for(catalog, 2, 42);

    // held-out pool: a fresh design id 99 with its two purchasers
    Dataset pool;
    pool.schema = catalog.schema;
    pool.consumer_columns = catalog.consumer_columns;
    pool.designs = {{99, {0.5, 1.0, 2.0}}};
    pool.consumers = {catalog.consumers[0], catalog.consumers[1]};
    pool.events = {{pool.consumers[0].consumer_id, 99}, {pool.consumers[1].consumer_id, 99}};
    pool.rebuild_index();

    const double acc = topk_accuracy(params, pool, pool.events, 7, CatalogMode::Insertion);
    CHECK(acc == 1.0);  // k = D+1 covers the whole inserted set
    const double acc1 = topk_accuracy(params, pool, pool.events, 1, CatalogMode::Insertion);
    CHECK(acc1 >= 0.0);
    CHECK(acc1 <= 1.0);

    // events referencing catalog designs are rejected in insertion mode
    std::vector<ChoiceEvent> bad{{pool.consumers[0].consumer_id, catalog.designs[0].design_id}};
    Dataset pool_bad = pool;
    pool_bad.designs.push_back(catalog.designs[0]);
    pool_bad.rebuild_index();
    CHECK_THROWS_AS(topk_accuracy(params, pool_bad, bad, 1, CatalogMode::Insertion),
                    std::invalid_argument);
}

TEST_CASE("existing mode rejects events outside the catalog") {
    auto catalog = tiny_catalog(mixed_schema(), 4, 5, 2, 51);
    ModelParams params = model_for(catalog, 2, 52);
    Dataset with_extra = catalog;
    with_extra.designs.push_back({77, {0.0, 0.0, 0.0}});
    with_extra.rebuild_index();
    std::vector<ChoiceEvent> events{{0, 77}};
    CHECK_THROWS_AS(topk_accuracy(params, with_extra, events, 1, CatalogMode::Existing),
                    std::invalid_argument);
}

TEST_CASE("feasibility_eval: identical held-in and held-out sets give identical means") {
    auto catalog = tiny_catalog(mixed_schema(), 5, 5, 2, 61);
    ModelParams params = model_for(catalog, 2, 62);
    const auto res = feasibility_eval(params, catalog.designs, catalog.designs, 16, 63);
    CHECK(res.heldin_mean == doctest::Approx(res.heldout_mean).epsilon(1e-12));
    CHECK(res.heldin_nlls == res.heldout_nlls);
}

TEST_CASE("gap_eval: accepted candidates at the induced gaps score zero MSqE") {
    auto catalog = tiny_catalog(mixed_schema(), 6, 8, 2, 71);
    ModelParams params = model_for(catalog, 2, 72);
    const std::vector<DesignVector> gaps{catalog.designs[0], catalog.designs[1]};

    SampleResult sample;
    for (const auto& g : gaps) {
        GapCandidate c;
        c.latent = encode_design(params, g).mu;
        c.status = GapCandidate::Status::Accepted;
        sample.accepted.push_back(sample.candidates.size());
        sample.candidates.push_back(c);
    }
    const auto res = gap_eval(params, sample, gaps);
    CHECK(res.n_accepted == 2);
    CHECK(res.msqe_accepted == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("gap_eval: two points at latent distance d average to d^2 / (2K)") {
    auto catalog = tiny_catalog(mixed_schema(), 4, 6, 2, 81);
    ModelParams params = model_for(catalog, 2, 82);
    const std::vector<DesignVector> gaps{catalog.designs[0]};
    const auto gap_latent = encode_design(params, gaps[0]).mu;

    const double d = 1.7;
    GapCandidate at_gap;
    at_gap.latent = gap_latent;
    at_gap.status = GapCandidate::Status::Accepted;
    GapCandidate away;
    away.latent = gap_latent;
    away.latent[0] += d;
    away.status = GapCandidate::Status::Accepted;

    SampleResult sample;
    sample.candidates = {at_gap, away};
    sample.accepted = {0, 1};
    const auto res = gap_eval(params, sample, gaps);
    CHECK(res.msqe_accepted == doctest::Approx((0.0 + d * d / 2.0) / 2.0).epsilon(1e-12));
    // feasibility-passing set equals the accepted set here
    CHECK(res.msqe_random == doctest::Approx(res.msqe_accepted).epsilon(1e-12));
}

TEST_CASE("rho2_histogram: masses normalize per nonempty group") {
    std::vector<double> induced{0.1, 0.5, 0.9, 1.0};
    std::vector<double> sampled{0.0, 0.05, 0.3, 0.3, 0.7, 2.0};  // out-of-range clamps to 1
    const auto h = rho2_histogram(induced, sampled, 20);
    REQUIRE(h.edges.size() == 21);
    double si = 0.0, ss = 0.0;
    for (size_t b = 0; b < 20; ++b) {
        si += h.induced_mass[b];
        ss += h.sampled_mass[b];
    }
    CHECK(std::fabs(si - 1.0) <= 1e-9);
    CHECK(std::fabs(ss - 1.0) <= 1e-9);
    // the clamped 2.0 lands in the top bin
    CHECK(h.sampled_mass[19] > 0.0);
}

TEST_CASE("rho2_histogram: a single candidate concentrates one bin") {
    std::vector<double> induced;
    std::vector<double> sampled{0.42};
    const auto h = rho2_histogram(induced, sampled, 20);
    int nonzero = 0;
    for (size_t b = 0; b < 20; ++b) {
        if (h.sampled_mass[b] > 0.0) {
            ++nonzero;
            CHECK(h.sampled_mass[b] == 1.0);
        }
        CHECK(h.induced_mass[b] == 0.0);  // empty group stays zero
    }
    CHECK(nonzero == 1);
}

TEST_CASE("EvalReport: sample standard deviation across seeds") {
    EvalReport report;
    report.stage = "choice";
    report.add("top1", 1.0);
    report.add("top1", 2.0);
    report.add("top1", 4.0);
    CHECK(report.mean("top1") == doctest::Approx(7.0 / 3.0).epsilon(1e-12));
    CHECK(report.stddev("top1") == doctest::Approx(std::sqrt(7.0 / 3.0)).epsilon(1e-12));

    report.add("single", 0.5);
    const std::string tsv = report.to_tsv();
    CHECK(tsv.find("single\t0.5\t-\t0.5") != std::string::npos);
    CHECK(tsv.find("# stage=choice") != std::string::npos);
}

TEST_CASE("EvalReport rejects non-finite metrics") {
    EvalReport report;
    CHECK_THROWS_AS(report.add("bad", std::numeric_limits<double>::quiet_NaN()),
                    std::invalid_argument);
}

TEST_CASE("evaluation metrics are deterministic given checkpoint and events") {
    auto catalog = tiny_catalog(mixed_schema(), 7, 30, 2, 91);
    ModelParams params = model_for(catalog, 2, 92);
    const double a = topk_accuracy(params, catalog, catalog.events, 2, CatalogMode::Existing);
    const double b = topk_accuracy(params, catalog, catalog.events, 2, CatalogMode::Existing);
    CHECK(a == b);
    const auto f1 = feasibility_eval(params, catalog.designs, {}, 16, 93);
    const auto f2 = feasibility_eval(params, catalog.designs, {}, 16, 93);
    CHECK(f1.heldin_nlls == f2.heldin_nlls);
}
