#include <doctest.h>

#include <cmath>
#include <set>

#include "gapfind/dataset.hpp"
#include "gapfind/rng.hpp"
#include "support.hpp"

using namespace gapfind;
using namespace testsupport;

namespace {

// Minimal two-design / three-consumer market on disk.
void write_minimal_market(const std::filesystem::path& dir, const std::string& event_rows,
                          const std::string& design_rows =
                              "design_id\tlength\tturbo\tstyle\n0\t1\t0\t2\n1\t3\t1\t0\n") {
    write_file(dir / "manifest",
               "format_version = 1\n"
               "design_file = designs.tsv\n"
               "consumer_file = consumers.tsv\n"
               "event_file = events.tsv\n"
               "design_count = 2\n"
               "consumer_count = 3\n"
               "event_count = 3\n"
               "design_block = length real 1 objective\n"
               "design_block = turbo binary 1 objective\n"
               "design_block = style categorical 4 subjective\n"
               "consumer_column = age real 1\n"
               "consumer_column = region categorical 3\n");
    write_file(dir / "designs.tsv", design_rows);
    write_file(dir / "consumers.tsv",
               "consumer_id\tage\tregion\n10\t31\t0\n11\t44\t2\n12\t27\t1\n");
    write_file(dir / "events.tsv", "consumer_id\tdesign_id\n" + event_rows);
}

Dataset random_dataset(uint64_t seed, int n_designs = 6, int n_consumers = 12) {
    return tiny_catalog(mixed_schema(4), n_designs, n_consumers, 3, seed);
}

}  // namespace

TEST_CASE("load_dataset: minimal well-formed market") {
    const auto dir = fresh_dir("load_min");
    write_minimal_market(dir, "10\t0\n11\t1\n12\t0\n");
    const Dataset ds = load_dataset(dir / "manifest");
    CHECK(ds.designs.size() == 2);
    CHECK(ds.consumers.size() == 3);
    CHECK(ds.events.size() == 3);
    // categorical consumer column one-hot expands to 3 columns
    CHECK(ds.consumer_dim() == 4);
    CHECK(ds.consumers[0].values == std::vector<double>{31.0, 1.0, 0.0, 0.0});
    CHECK(ds.consumers[1].values == std::vector<double>{44.0, 0.0, 0.0, 1.0});
    CHECK(ds.schema.category_count() == 3);
}

TEST_CASE("load_dataset: event referencing an unknown design") {
    const auto dir = fresh_dir("load_unknown");
    write_minimal_market(dir, "10\t0\n11\t99\n12\t0\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir / "manifest"),
                         doctest::Contains("unknown design 99"), LoadError);
}

TEST_CASE("load_dataset: categorical index at cardinality is out of range") {
    const auto dir = fresh_dir("load_oob");
    write_minimal_market(dir, "10\t0\n11\t1\n12\t0\n",
                         "design_id\tlength\tturbo\tstyle\n0\t1\t0\t4\n1\t3\t1\t0\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir / "manifest"),
                         doctest::Contains("index out of range"), LoadError);
}

TEST_CASE("load_dataset: non-finite value is rejected") {
    const auto dir = fresh_dir("load_nan");
    write_minimal_market(dir, "10\t0\n11\t1\n12\t0\n",
                         "design_id\tlength\tturbo\tstyle\n0\tnan\t0\t2\n1\t3\t1\t0\n");
    CHECK_THROWS_AS(load_dataset(dir / "manifest"), LoadError);
}

TEST_CASE("load_dataset: count mismatch against the manifest header") {
    const auto dir = fresh_dir("load_count");
    write_minimal_market(dir, "10\t0\n11\t1\n");  // two events, manifest says three
    CHECK_THROWS_WITH_AS(load_dataset(dir / "manifest"),
                         doctest::Contains("event_count mismatch"), LoadError);
}

TEST_CASE("save/load round trip is value-identical") {
    const Dataset ds = random_dataset(99);
    const auto dir = fresh_dir("roundtrip");
    save_dataset(ds, dir);
    const Dataset back = load_dataset(dir / "manifest");
    REQUIRE(back.designs.size() == ds.designs.size());
    REQUIRE(back.consumers.size() == ds.consumers.size());
    REQUIRE(back.events.size() == ds.events.size());
    for (size_t i = 0; i < ds.designs.size(); ++i) {
        CHECK(back.designs[i].design_id == ds.designs[i].design_id);
        CHECK(back.designs[i].values == ds.designs[i].values);
    }
    for (size_t i = 0; i < ds.consumers.size(); ++i)
        CHECK(back.consumers[i].values == ds.consumers[i].values);
    CHECK(back.schema.canonical_string() == ds.schema.canonical_string());
}

TEST_CASE("schema invariants") {
    VariableSchema schema = mixed_schema();
    CHECK_NOTHROW(schema.validate());

    SUBCASE("categorical cardinality below 2") {
        schema.blocks[2].cardinality = 1;
        CHECK_THROWS_AS(schema.validate(), LoadError);
    }
    SUBCASE("non-categorical cardinality must be 1") {
        schema.blocks[0].cardinality = 3;
        CHECK_THROWS_AS(schema.validate(), LoadError);
    }
    SUBCASE("duplicate names") {
        schema.blocks[1].name = "length";
        CHECK_THROWS_AS(schema.validate(), LoadError);
    }
}

TEST_CASE("split_dataset: no held-out designs is a plain consumer partition") {
    const Dataset ds = random_dataset(5);
    SplitSpec spec;
    spec.seed = 13;
    const Splits s = split_dataset(ds, spec);
    CHECK(s.train.designs.size() == ds.designs.size());
    CHECK(s.gap_val.consumers.empty());
    CHECK(s.gap_test.consumers.empty());
    CHECK(s.train.consumers.size() + s.val.consumers.size() + s.test.consumers.size() ==
          ds.consumers.size());
}

TEST_CASE("split_dataset: purchasers of a held-out design land only in the gap pool") {
    Dataset ds = random_dataset(5);
    // consumers 2 and 7 bought design 5
    ds.events[2].chosen_design_id = 5;
    ds.events[7].chosen_design_id = 5;
    for (size_t i = 0; i < ds.events.size(); ++i)
        if (i != 2 && i != 7 && ds.events[i].chosen_design_id == 5) ds.events[i].chosen_design_id = 0;
    ds.rebuild_index();

    SplitSpec spec;
    spec.seed = 13;
    spec.test_gap_ids = {5};
    const Splits s = split_dataset(ds, spec);

    std::set<int> gap_ids;
    for (const auto& c : s.gap_test.consumers) gap_ids.insert(c.consumer_id);
    CHECK(gap_ids == std::set<int>{2, 7});
    for (const auto& part : {&s.train, &s.val, &s.test})
        for (const auto& c : part->consumers) {
            CHECK(c.consumer_id != 2);
            CHECK(c.consumer_id != 7);
        }
    for (const auto& d : s.train.designs) CHECK(d.design_id != 5);
    CHECK(s.gap_test.designs.size() == 1);
    CHECK(s.gap_test.designs[0].design_id == 5);
}

TEST_CASE("split_dataset: deterministic given the seed") {
    const Dataset ds = random_dataset(21);
    SplitSpec spec;
    spec.seed = 77;
    const Splits a = split_dataset(ds, spec);
    const Splits b = split_dataset(ds, spec);
    REQUIRE(a.train.consumers.size() == b.train.consumers.size());
    for (size_t i = 0; i < a.train.consumers.size(); ++i)
        CHECK(a.train.consumers[i].consumer_id == b.train.consumers[i].consumer_id);
    for (size_t i = 0; i < a.test.consumers.size(); ++i)
        CHECK(a.test.consumers[i].consumer_id == b.test.consumers[i].consumer_id);
}

TEST_CASE("split_dataset: unknown held-out id") {
    const Dataset ds = random_dataset(1);
    SplitSpec spec;
    spec.test_gap_ids = {42};
    CHECK_THROWS_WITH_AS(split_dataset(ds, spec), doctest::Contains("not in catalog"), LoadError);
}

TEST_CASE("partition property: every consumer in exactly one pool") {
    Rng seeds(404);
    for (int rep = 0; rep < 10; ++rep) {
        Dataset ds = random_dataset(seeds.uniform_int(10000), 8, 30);
        SplitSpec spec;
        spec.seed = seeds.uniform_int(10000);
        spec.val_gap_ids = {1};
        spec.test_gap_ids = {4};
        const Splits s = split_dataset(ds, spec);
        std::set<int> seen;
        size_t total = 0;
        for (const auto* part : {&s.train, &s.val, &s.test, &s.gap_val, &s.gap_test}) {
            total += part->consumers.size();
            for (const auto& c : part->consumers) CHECK(seen.insert(c.consumer_id).second);
        }
        CHECK(total == ds.consumers.size());
        // gap pools hold exactly the purchasers of held-out designs
        std::set<int> expected;
        for (const auto& e : ds.events)
            if (e.chosen_design_id == 1 || e.chosen_design_id == 4) expected.insert(e.consumer_id);
        std::set<int> pooled;
        for (const auto& c : s.gap_val.consumers) pooled.insert(c.consumer_id);
        for (const auto& c : s.gap_test.consumers) pooled.insert(c.consumer_id);
        CHECK(pooled == expected);
    }
}

TEST_CASE("fit_normalizer: real block {1,3} standardizes to {-1,+1}") {
    VariableSchema schema;
    schema.blocks.push_back({"x", BlockKind::Real, 1, Channel::Objective});
    schema.blocks.push_back({"b", BlockKind::Binary, 1, Channel::Objective});
    Dataset ds;
    ds.schema = schema;
    ds.consumer_columns = {{"c0", BlockKind::Real, 1}};
    ds.designs = {{0, {1.0, 1.0}}, {1, {3.0, 0.0}}};
    ds.consumers = {{0, {2.0}}, {1, {4.0}}};
    ds.events = {{0, 0}, {1, 1}};
    ds.rebuild_index();

    const Normalizer nrm = fit_normalizer(ds);
    const Dataset out = apply_normalizer(nrm, ds);
    // population std of {1,3} is 1
    CHECK(out.designs[0].values[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(out.designs[1].values[0] == doctest::Approx(1.0).epsilon(1e-12));
    // binary blocks pass through
    CHECK(out.designs[0].values[1] == 1.0);
    CHECK(out.designs[1].values[1] == 0.0);
    CHECK(nrm.warnings.empty());
}

TEST_CASE("fit_normalizer: constant real block clamps std and warns") {
    VariableSchema schema;
    schema.blocks.push_back({"x", BlockKind::Real, 1, Channel::Objective});
    Dataset ds;
    ds.schema = schema;
    ds.consumer_columns = {{"c0", BlockKind::Real, 1}};
    ds.designs = {{0, {5.0}}, {1, {5.0}}};
    ds.consumers = {{0, {1.0}}, {1, {2.0}}};
    ds.events = {{0, 0}, {1, 1}};
    ds.rebuild_index();

    const Normalizer nrm = fit_normalizer(ds);
    REQUIRE(nrm.design_stats[0].has_value());
    CHECK(nrm.design_stats[0]->clamped);
    CHECK(nrm.warnings.size() == 1);
    const Dataset out = apply_normalizer(nrm, ds);
    CHECK(out.designs[0].values[0] == 0.0);
    CHECK(out.designs[1].values[0] == 0.0);
}

TEST_CASE("normalizer is idempotent on already-normalized data") {
    const Dataset ds = random_dataset(31, 10, 20);
    const Normalizer first = fit_normalizer(ds);
    const Dataset once = apply_normalizer(first, ds);
    const Normalizer second = fit_normalizer(once);
    const Dataset twice = apply_normalizer(second, once);
    for (size_t d = 0; d < once.designs.size(); ++d)
        for (size_t b = 0; b < once.designs[d].values.size(); ++b)
            CHECK(std::fabs(twice.designs[d].values[b] - once.designs[d].values[b]) <= 1e-12);
    for (size_t c = 0; c < once.consumers.size(); ++c)
        for (size_t j = 0; j < once.consumers[c].values.size(); ++j)
            CHECK(std::fabs(twice.consumers[c].values[j] - once.consumers[c].values[j]) <= 1e-12);
}

TEST_CASE("normalizer inverse recovers raw design values") {
    const Dataset ds = random_dataset(77);
    const Normalizer nrm = fit_normalizer(ds);
    const auto normalized = nrm.apply_design(ds.designs[0]);
    const auto back = nrm.invert_design(normalized);
    for (size_t b = 0; b < back.values.size(); ++b)
        CHECK(back.values[b] == doctest::Approx(ds.designs[0].values[b]).epsilon(1e-12));
}

TEST_CASE("split fractions must sum to one") {
    const Dataset ds = random_dataset(3);
    SplitSpec spec;
    spec.train_fraction = 0.5;
    spec.val_fraction = 0.2;
    spec.test_fraction = 0.2;
    CHECK_THROWS_AS(split_dataset(ds, spec), LoadError);
}
