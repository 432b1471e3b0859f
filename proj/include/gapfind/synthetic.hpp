#pragma once

#include <cstdint>
#include <vector>

#include "gapfind/dataset.hpp"

namespace gapfind {

struct GapClusterConfig {
    std::vector<double> center;  // length true_latent_dim
    double radius = 0.5;
    int n_designs = 0;
};

struct MarketConfig {
    uint64_t seed = 1;
    int n_designs = 20;
    int n_consumers = 2000;
    int true_latent_dim = 3;
    int consumer_dim = 8;
    int real_blocks = 10;
    int binary_blocks = 10;
    int categorical_blocks = 10;
    int categorical_cardinality = 4;
    int n_clusters = 3;          // non-gap design clusters
    double cluster_spread = 2.5; // scale of cluster centers
    double cluster_radius = 0.5;
    double taste_scale = 0.3;    // softmax temperature on utilities
    double emission_noise = 0.1;
    double consumer_noise = 0.05;
    GapClusterConfig gap;

    void validate() const;
    int design_block_count() const { return real_blocks + binary_blocks + categorical_blocks; }
};

// Everything the generator knows: latent coordinates, cluster membership,
// tastes and the utilities that produced the purchases.
struct GroundTruth {
    std::vector<std::vector<double>> design_latents;   // per design, true_latent_dim
    std::vector<std::vector<double>> consumer_tastes;  // per consumer
    std::vector<int> design_cluster;                   // n_clusters == gap cluster id
    std::vector<bool> is_gap_design;
    double taste_scale = 0.0;

    double utility(int consumer_pos, int design_pos) const;
    std::vector<double> choice_probs(int consumer_pos) const;
    std::vector<int> gap_design_positions() const;
};

struct SyntheticMarket {
    Dataset dataset;
    GroundTruth truth;
};

// Designs are drawn from latent clusters (plus one planted gap cluster) and
// emitted through a fixed random mixed-type map; each consumer purchases once
// from softmax(taste . latent / taste_scale). Deterministic given cfg.seed.
SyntheticMarket gen_synthetic_market(const MarketConfig& cfg);

struct PlantReport {
    SplitSpec spec;
    int purchaser_count = 0;
};

// Holds out the planted gap designs (first half validation gaps, rest test
// gaps) and counts their purchasers.
PlantReport plant_gap(const Dataset& ds, const GroundTruth& gt, const MarketConfig& cfg);

}  // namespace gapfind
