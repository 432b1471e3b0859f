#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gapfind/choice_vae.hpp"
#include "gapfind/dataset.hpp"
#include "gapfind/mathutil.hpp"
#include "gapfind/optimizer.hpp"
#include "gapfind/rng.hpp"

namespace testsupport {

inline std::filesystem::path fresh_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("gapfind_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Mixed three-block schema used across the unit suites.
inline gapfind::VariableSchema mixed_schema(int cat_cardinality = 3) {
    gapfind::VariableSchema schema;
    schema.blocks.push_back({"length", gapfind::BlockKind::Real, 1, gapfind::Channel::Objective});
    schema.blocks.push_back({"turbo", gapfind::BlockKind::Binary, 1, gapfind::Channel::Objective});
    schema.blocks.push_back(
        {"style", gapfind::BlockKind::Categorical, cat_cardinality, gapfind::Channel::Subjective});
    return schema;
}

// Random small catalog + consumers + one event per consumer.
inline gapfind::Dataset tiny_catalog(const gapfind::VariableSchema& schema, int n_designs,
                                     int n_consumers, int consumer_dim, uint64_t seed) {
    gapfind::Dataset ds;
    ds.schema = schema;
    for (int j = 0; j < consumer_dim; ++j)
        ds.consumer_columns.push_back({"c" + std::to_string(j), gapfind::BlockKind::Real, 1});
    gapfind::Rng rng(seed);
    for (int d = 0; d < n_designs; ++d) {
        gapfind::DesignVector dv;
        dv.design_id = d;
        for (const auto& b : schema.blocks) {
            switch (b.kind) {
                case gapfind::BlockKind::Real: dv.values.push_back(rng.normal()); break;
                case gapfind::BlockKind::Binary: dv.values.push_back(rng.uniform_int(2)); break;
                case gapfind::BlockKind::Categorical:
                    dv.values.push_back(rng.uniform_int(b.cardinality));
                    break;
            }
        }
        ds.designs.push_back(dv);
    }
    for (int c = 0; c < n_consumers; ++c) {
        gapfind::ConsumerVector cv;
        cv.consumer_id = c;
        for (int j = 0; j < consumer_dim; ++j) cv.values.push_back(rng.normal());
        ds.consumers.push_back(cv);
        ds.events.push_back({c, rng.uniform_int(n_designs)});
    }
    ds.rebuild_index();
    ds.validate();
    return ds;
}

// 2001-point trapezoid over [-10, 10].
struct TrapezoidGrid {
    std::vector<double> points;
    double step = 0.0;

    TrapezoidGrid(double lo = -10.0, double hi = 10.0, int n = 2001) {
        step = (hi - lo) / (n - 1);
        for (int i = 0; i < n; ++i) points.push_back(lo + step * i);
    }

    double weight(size_t i) const {
        return (i == 0 || i + 1 == points.size()) ? 0.5 * step : step;
    }
};

// log integral f via log-sum-exp over the grid, f given in log space.
inline double log_trapezoid(const TrapezoidGrid& grid, const std::vector<double>& log_f) {
    std::vector<double> terms(log_f.size());
    for (size_t i = 0; i < log_f.size(); ++i) terms[i] = log_f[i] + std::log(grid.weight(i));
    return gapfind::log_sum_exp(terms);
}

// Joint log p(y, x_d, h) factors for a single event on a 1-D-latent model:
// the chosen design's latent is h, all other catalog columns come from the
// cache. Used by both sides of the variational-bound oracle.
struct OneDimInstance {
    gapfind::ModelParams params;
    gapfind::Dataset catalog;
    gapfind::ChoiceEvent event;

    double log_joint_given_h(double h) const {
        using namespace gapfind;
        const int target = catalog.design_pos(event.chosen_design_id);
        Tensor latents = params.latent_cache;
        latents.at(target, 0) = h;
        const auto h_c = embed_consumer(params, catalog.consumer_by_id(event.consumer_id));
        const auto probs = choice_prob(h_c, latents);
        const std::vector<double> hv{h};
        const auto decoded = decode_design(params, hv);
        const double log_px =
            -design_nll(params.schema, catalog.design_by_id(event.chosen_design_id), decoded);
        return std::log(probs[static_cast<size_t>(target)]) + log_px + normal_log_pdf(h, 0.0, 1.0);
    }

    // log p(y, x_d) by quadrature.
    double log_evidence(const TrapezoidGrid& grid) const {
        std::vector<double> log_f;
        for (double h : grid.points) log_f.push_back(log_joint_given_h(h));
        return log_trapezoid(grid, log_f);
    }

    // True ELBO E_q[log p(y, x, h) - log q(h|x)] by quadrature.
    double elbo_exact(const TrapezoidGrid& grid) const {
        const auto enc =
            gapfind::encode_design(params, catalog.design_by_id(event.chosen_design_id));
        double acc = 0.0;
        for (size_t i = 0; i < grid.points.size(); ++i) {
            const double h = grid.points[i];
            const double log_q = gapfind::normal_log_pdf(h, enc.mu[0], enc.sigma[0]);
            const double q = std::exp(log_q);
            if (q < 1e-300) continue;
            acc += grid.weight(i) * q * (log_joint_given_h(h) - log_q);
        }
        return acc;
    }
};

inline OneDimInstance make_one_dim_instance(uint64_t seed, int n_designs = 3) {
    using namespace gapfind;
    OneDimInstance inst;
    inst.catalog = tiny_catalog(mixed_schema(), n_designs, 2, 2, seed);
    ModelConfig cfg;
    cfg.latent_dim = 1;
    cfg.encoder_hidden = {4};
    cfg.decoder_hidden = {4};
    cfg.embedder_hidden = {4};
    cfg.seed = seed;
    inst.params = init_params(inst.catalog.schema, 2, cfg);
    refresh_latent_cache(inst.params, inst.catalog.designs);
    inst.event = inst.catalog.events.front();
    return inst;
}

// A few hundred full-batch steps; enough to pull q(h|x) toward the posterior
// so importance proposals are usable.
inline void train_briefly(OneDimInstance& inst, int steps = 600, double lr = 5e-3) {
    gapfind::OptimizerConfig ocfg;
    ocfg.lr = lr;
    gapfind::Optimizer opt(ocfg);
    gapfind::Rng rng(1);
    for (int step = 0; step < steps; ++step) {
        auto res = gapfind::elbo_with_grads(inst.params, inst.catalog, inst.catalog.events, rng);
        opt.step(inst.params.weights, res.grads);
    }
    gapfind::refresh_latent_cache(inst.params, inst.catalog.designs);
}

}  // namespace testsupport
