#include "gapfind/synthetic.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "gapfind/mathutil.hpp"
#include "gapfind/rng.hpp"

namespace gapfind {

void MarketConfig::validate() const {
    if (n_designs < 1 || n_consumers < 1) throw std::invalid_argument("market needs designs and consumers");
    if (true_latent_dim < 1 || consumer_dim < 1) throw std::invalid_argument("market dims must be positive");
    if (real_blocks < 0 || binary_blocks < 0 || categorical_blocks < 0 || design_block_count() < 1)
        throw std::invalid_argument("market needs at least one design block");
    if (categorical_blocks > 0 && categorical_cardinality < 2)
        throw std::invalid_argument("categorical cardinality must be >= 2");
    if (n_clusters < 1) throw std::invalid_argument("market needs at least one cluster");
    if (taste_scale <= 0.0) throw std::invalid_argument("taste_scale must be positive");
    if (gap.n_designs < 0 || gap.n_designs > n_designs)
        throw std::invalid_argument("gap cluster size exceeds design count");
    if (gap.n_designs > 0 && static_cast<int>(gap.center.size()) != true_latent_dim)
        throw std::invalid_argument("gap center dimension must equal true_latent_dim");
}

double GroundTruth::utility(int consumer_pos, int design_pos) const {
    const auto& v = consumer_tastes[static_cast<size_t>(consumer_pos)];
    const auto& t = design_latents[static_cast<size_t>(design_pos)];
    double u = 0.0;
    for (size_t k = 0; k < v.size(); ++k) u += v[k] * t[k];
    return u;
}

std::vector<double> GroundTruth::choice_probs(int consumer_pos) const {
    std::vector<double> logits(design_latents.size());
    for (size_t d = 0; d < design_latents.size(); ++d)
        logits[d] = utility(consumer_pos, static_cast<int>(d)) / taste_scale;
    return stable_softmax(logits);
}

std::vector<int> GroundTruth::gap_design_positions() const {
    std::vector<int> out;
    for (size_t d = 0; d < is_gap_design.size(); ++d)
        if (is_gap_design[d]) out.push_back(static_cast<int>(d));
    return out;
}

namespace {

// Fixed random emission from true latent space to observed mixed-type blocks.
struct Emission {
    struct Head {
        std::vector<std::vector<double>> weights;  // rows x latent_dim
        std::vector<double> bias;
    };
    std::vector<Head> heads;  // one per block, categorical heads have card rows
};

Emission make_emission(const MarketConfig& cfg, Rng& rng) {
    Emission em;
    const double scale = 2.0 / std::sqrt(static_cast<double>(cfg.true_latent_dim));
    for (int b = 0; b < cfg.design_block_count(); ++b) {
        const bool categorical = b >= cfg.real_blocks + cfg.binary_blocks;
        const int rows = categorical ? cfg.categorical_cardinality : 1;
        Emission::Head head;
        for (int r = 0; r < rows; ++r) {
            std::vector<double> w(static_cast<size_t>(cfg.true_latent_dim));
            for (auto& x : w) x = scale * rng.normal();
            head.weights.push_back(std::move(w));
            head.bias.push_back(0.1 * rng.normal());
        }
        em.heads.push_back(std::move(head));
    }
    return em;
}

double affine(const Emission::Head& head, int row, const std::vector<double>& latent) {
    double v = head.bias[static_cast<size_t>(row)];
    for (size_t k = 0; k < latent.size(); ++k) v += head.weights[static_cast<size_t>(row)][k] * latent[k];
    return v;
}

}  // namespace

SyntheticMarket gen_synthetic_market(const MarketConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);

    SyntheticMarket out;
    Dataset& ds = out.dataset;
    GroundTruth& gt = out.truth;
    gt.taste_scale = cfg.taste_scale;

    for (int b = 0; b < cfg.design_block_count(); ++b) {
        Block blk;
        if (b < cfg.real_blocks) {
            blk.kind = BlockKind::Real;
            blk.name = "real_" + std::to_string(b);
        } else if (b < cfg.real_blocks + cfg.binary_blocks) {
            blk.kind = BlockKind::Binary;
            blk.name = "bin_" + std::to_string(b - cfg.real_blocks);
        } else {
            blk.kind = BlockKind::Categorical;
            blk.cardinality = cfg.categorical_cardinality;
            blk.name = "cat_" + std::to_string(b - cfg.real_blocks - cfg.binary_blocks);
        }
        blk.channel = b % 2 == 0 ? Channel::Objective : Channel::Subjective;
        ds.schema.blocks.push_back(blk);
    }
    for (int j = 0; j < cfg.consumer_dim; ++j)
        ds.consumer_columns.push_back({"c" + std::to_string(j), BlockKind::Real, 1});

    // Design latents live on a shell of radius cluster_spread: clusters are
    // direction bundles, the planted gap is a cone of directions kept clear
    // of non-gap designs. Keeps every design (gaps included) interpolable
    // from the rest of the catalog while utilities stay bilinear.
    auto normalize = [](std::vector<double> v) {
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n < 1e-12) {
            v.assign(v.size(), 0.0);
            v[0] = 1.0;
            return v;
        }
        for (auto& x : v) x /= n;
        return v;
    };
    auto chord = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(s);
    };

    std::vector<std::vector<double>> centers;
    for (int j = 0; j < cfg.n_clusters; ++j) centers.push_back(normalize(rng.normal_vec(
        static_cast<size_t>(cfg.true_latent_dim))));

    std::vector<double> gap_dir;
    if (cfg.gap.n_designs > 0) gap_dir = normalize(cfg.gap.center);
    const double exclusion = 1.6 * cfg.gap.radius;

    const Emission em = make_emission(cfg, rng);

    // Consumer covariates are a noisy linear view of the taste vector.
    std::vector<std::vector<double>> taste_map(static_cast<size_t>(cfg.consumer_dim));
    for (auto& row : taste_map) {
        row.resize(static_cast<size_t>(cfg.true_latent_dim));
        for (auto& x : row) x = rng.normal();
    }

    const int n_gap = cfg.gap.n_designs;
    for (int d = 0; d < cfg.n_designs; ++d) {
        const bool gap = d >= cfg.n_designs - n_gap;
        std::vector<double> dir;
        int cluster;
        if (gap) {
            cluster = cfg.n_clusters;
            dir = gap_dir;
            for (size_t k = 0; k < dir.size(); ++k) dir[k] += cfg.gap.radius * rng.normal();
            dir = normalize(std::move(dir));
        } else {
            cluster = rng.uniform_int(cfg.n_clusters);
            for (int attempt = 0; attempt < 100; ++attempt) {
                dir = centers[static_cast<size_t>(cluster)];
                for (size_t k = 0; k < dir.size(); ++k) dir[k] += cfg.cluster_radius * rng.normal();
                dir = normalize(std::move(dir));
                if (gap_dir.empty() || chord(dir, gap_dir) >= exclusion) break;
            }
        }
        std::vector<double> latent(static_cast<size_t>(cfg.true_latent_dim));
        const double radial = cfg.cluster_spread * (1.0 + 0.03 * rng.normal());
        for (size_t k = 0; k < latent.size(); ++k) latent[k] = radial * dir[k];

        DesignVector dv;
        dv.design_id = d;
        for (int b = 0; b < cfg.design_block_count(); ++b) {
            const auto& head = em.heads[static_cast<size_t>(b)];
            if (b < cfg.real_blocks) {
                dv.values.push_back(affine(head, 0, latent) + cfg.emission_noise * rng.normal());
            } else if (b < cfg.real_blocks + cfg.binary_blocks) {
                const double p = sigmoid(affine(head, 0, latent));
                dv.values.push_back(rng.uniform() < p ? 1.0 : 0.0);
            } else {
                std::vector<double> logits(static_cast<size_t>(cfg.categorical_cardinality));
                for (int r = 0; r < cfg.categorical_cardinality; ++r) logits[static_cast<size_t>(r)] = affine(head, r, latent);
                auto probs = stable_softmax(logits);
                dv.values.push_back(static_cast<double>(rng.categorical(probs)));
            }
        }
        ds.designs.push_back(std::move(dv));
        gt.design_latents.push_back(std::move(latent));
        gt.design_cluster.push_back(cluster);
        gt.is_gap_design.push_back(gap);
    }

    for (int c = 0; c < cfg.n_consumers; ++c) {
        std::vector<double> taste(static_cast<size_t>(cfg.true_latent_dim));
        for (auto& x : taste) x = rng.normal();

        ConsumerVector cv;
        cv.consumer_id = c;
        for (int j = 0; j < cfg.consumer_dim; ++j) {
            double v = cfg.consumer_noise * rng.normal();
            for (int k = 0; k < cfg.true_latent_dim; ++k)
                v += taste_map[static_cast<size_t>(j)][static_cast<size_t>(k)] * taste[static_cast<size_t>(k)];
            cv.values.push_back(v);
        }
        ds.consumers.push_back(std::move(cv));
        gt.consumer_tastes.push_back(std::move(taste));

        const auto probs = gt.choice_probs(c);
        ChoiceEvent e;
        e.consumer_id = c;
        e.chosen_design_id = rng.categorical(probs);
        ds.events.push_back(e);
    }

    ds.rebuild_index();
    ds.validate();
    return out;
}

PlantReport plant_gap(const Dataset& ds, const GroundTruth& gt, const MarketConfig& cfg) {
    PlantReport report;
    report.spec.seed = cfg.seed;

    std::vector<int> gap_ids;
    for (size_t d = 0; d < gt.is_gap_design.size(); ++d)
        if (gt.is_gap_design[d]) gap_ids.push_back(ds.designs[d].design_id);

    const size_t n_val = gap_ids.size() / 2;
    report.spec.val_gap_ids.assign(gap_ids.begin(), gap_ids.begin() + n_val);
    report.spec.test_gap_ids.assign(gap_ids.begin() + n_val, gap_ids.end());

    std::set<int> gaps(gap_ids.begin(), gap_ids.end());
    std::set<int> purchasers;
    for (const auto& e : ds.events)
        if (gaps.count(e.chosen_design_id)) purchasers.insert(e.consumer_id);
    report.purchaser_count = static_cast<int>(purchasers.size());
    return report;
}

}  // namespace gapfind
