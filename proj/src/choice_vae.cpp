#include "gapfind/choice_vae.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "gapfind/evaluation.hpp"
#include "gapfind/mathutil.hpp"
#include "gapfind/optimizer.hpp"

namespace gapfind {

void ModelConfig::validate() const {
    if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
    if (kl_weight < 0.0) throw std::invalid_argument("kl_weight must be >= 0");
    if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
    if (activation != "tanh" && activation != "relu")
        throw std::invalid_argument("activation must be tanh or relu");
    if (optimizer != "adam" && optimizer != "sgd")
        throw std::invalid_argument("optimizer must be adam or sgd");
    if (sigma_floor <= 0.0) throw std::invalid_argument("sigma_floor must be positive");
    if (epochs < 0 || batch_size < 1) throw std::invalid_argument("bad epochs/batch_size");
    for (const auto& f : freeze)
        if (f != "enc" && f != "dec" && f != "emb")
            throw std::invalid_argument("unknown freeze group '" + f + "'");
}

double ModelConfig::group_lr(const std::string& group) const {
    if (group == "enc" && lr_encoder >= 0.0) return lr_encoder;
    if (group == "dec" && lr_decoder >= 0.0) return lr_decoder;
    if (group == "emb" && lr_embedder >= 0.0) return lr_embedder;
    return lr;
}

bool ModelConfig::group_frozen(const std::string& group) const {
    return std::find(freeze.begin(), freeze.end(), group) != freeze.end();
}

std::string param_group(const std::string& name) {
    return name.substr(0, name.find('.'));
}

int ModelParams::catalog_pos(int design_id) const {
    for (size_t i = 0; i < catalog_ids.size(); ++i)
        if (catalog_ids[i] == design_id) return static_cast<int>(i);
    return -1;
}

void ModelParams::validate_finite() const {
    for (const auto& [name, t] : weights)
        if (!t.all_finite()) throw NumericalError("non-finite parameter tensor " + name);
}

namespace detail {

DecoderLayout decoder_layout(const VariableSchema& schema) {
    DecoderLayout layout;
    for (const auto& b : schema.blocks) {
        DecoderLayout::Slice s;
        s.begin = layout.total;
        switch (b.kind) {
            case BlockKind::Real: s.len = 2; break;  // mean, raw sigma
            case BlockKind::Binary: s.len = 1; break;
            case BlockKind::Categorical: s.len = b.cardinality; break;
        }
        layout.total += s.len;
        layout.blocks.push_back(s);
    }
    return layout;
}

}  // namespace detail

namespace {

struct LayerSpec {
    std::string name;
    int in = 0, out = 0;
};

// Layer shapes for one component; "<prefix>.l<i>" hidden layers then the
// named heads.
std::vector<LayerSpec> component_layers(const std::string& prefix, int in_dim,
                                        const std::vector<int>& hidden,
                                        const std::vector<std::pair<std::string, int>>& heads) {
    std::vector<LayerSpec> specs;
    int cur = in_dim;
    for (size_t i = 0; i < hidden.size(); ++i) {
        specs.push_back({prefix + ".l" + std::to_string(i), cur, hidden[i]});
        cur = hidden[i];
    }
    for (const auto& [head, out] : heads) specs.push_back({prefix + "." + head, cur, out});
    return specs;
}

std::vector<LayerSpec> all_layers(const VariableSchema& schema, int consumer_dim, const ModelConfig& cfg) {
    const int k = cfg.latent_dim;
    const auto layout = detail::decoder_layout(schema);
    std::vector<LayerSpec> specs;
    auto add = [&](std::vector<LayerSpec> v) { specs.insert(specs.end(), v.begin(), v.end()); };
    add(component_layers("enc", schema.onehot_dim(), cfg.encoder_hidden, {{"mu", k}, {"sig", k}}));
    add(component_layers("dec", k, cfg.decoder_hidden, {{"out", static_cast<int>(layout.total)}}));
    add(component_layers("emb", consumer_dim, cfg.embedder_hidden, {{"out", k}}));
    return specs;
}

}  // namespace

ModelParams init_params(const VariableSchema& schema, int consumer_dim, const ModelConfig& cfg) {
    schema.validate();
    cfg.validate();
    if (consumer_dim < 1) throw std::invalid_argument("consumer_dim must be >= 1");

    ModelParams params;
    params.schema = schema;
    params.consumer_dim = consumer_dim;
    params.config = cfg;

    Rng rng(derive_seed(cfg.seed, 0x9a9));
    for (const auto& spec : all_layers(schema, consumer_dim, cfg)) {
        Tensor w({spec.in, spec.out});
        const double a = std::sqrt(6.0 / static_cast<double>(spec.in + spec.out));
        for (long i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-a, a);
        params.weights[spec.name + ".W"] = std::move(w);
        params.weights[spec.name + ".b"] = Tensor({1, spec.out});
    }
    return params;
}

Tensor design_to_input(const VariableSchema& schema, const DesignVector& d) {
    if (d.values.size() != schema.blocks.size())
        throw std::invalid_argument("design does not conform to schema");
    Tensor x({1, schema.onehot_dim()});
    long at = 0;
    for (size_t b = 0; b < schema.blocks.size(); ++b) {
        const Block& blk = schema.blocks[b];
        if (blk.kind == BlockKind::Categorical) {
            const int idx = static_cast<int>(d.values[b]);
            x[at + idx] = 1.0;
            at += blk.cardinality;
        } else {
            x[at++] = d.values[b];
        }
    }
    return x;
}

Tensor consumer_to_input(const ConsumerVector& c) {
    return Tensor::row(c.values);
}

namespace detail {

std::map<std::string, NodeId> bind_group(Graph& g, const ModelParams& params, const std::string& prefix) {
    std::map<std::string, NodeId> nodes;
    for (const auto& [name, t] : params.weights)
        if (param_group(name) == prefix) nodes[name] = g.param(t, name);
    return nodes;
}

namespace {

NodeId activation(Graph& g, const ModelParams& params, NodeId x) {
    return params.config.activation == "relu" ? g.relu(x) : g.tanh_op(x);
}

NodeId linear(Graph& g, const std::map<std::string, NodeId>& pn, const std::string& layer, NodeId x) {
    return g.add(g.matmul(x, pn.at(layer + ".W")), pn.at(layer + ".b"));
}

NodeId mlp_body(Graph& g, const std::map<std::string, NodeId>& pn, const ModelParams& params,
                const std::string& prefix, const std::vector<int>& hidden, NodeId x) {
    NodeId h = x;
    for (size_t i = 0; i < hidden.size(); ++i)
        h = activation(g, params, linear(g, pn, prefix + ".l" + std::to_string(i), h));
    return h;
}

}  // namespace

EncoderNodes encoder_graph(Graph& g, const std::map<std::string, NodeId>& pn, const ModelParams& params,
                           NodeId x) {
    NodeId h = mlp_body(g, pn, params, "enc", params.config.encoder_hidden, x);
    EncoderNodes out;
    out.mu = linear(g, pn, "enc.mu", h);
    out.sigma = g.softplus_floor(linear(g, pn, "enc.sig", h), params.config.sigma_floor);
    return out;
}

NodeId decoder_graph(Graph& g, const std::map<std::string, NodeId>& pn, const ModelParams& params,
                     NodeId h) {
    NodeId body = mlp_body(g, pn, params, "dec", params.config.decoder_hidden, h);
    return linear(g, pn, "dec.out", body);
}

NodeId embedder_graph(Graph& g, const std::map<std::string, NodeId>& pn, const ModelParams& params,
                      NodeId x) {
    NodeId body = mlp_body(g, pn, params, "emb", params.config.embedder_hidden, x);
    return linear(g, pn, "emb.out", body);
}

NodeId design_nll_graph(Graph& g, const ModelParams& params, NodeId decoder_out, const DesignVector& d) {
    const auto layout = decoder_layout(params.schema);
    std::vector<NodeId> terms;
    for (size_t b = 0; b < params.schema.blocks.size(); ++b) {
        const Block& blk = params.schema.blocks[b];
        const auto& s = layout.blocks[b];
        switch (blk.kind) {
            case BlockKind::Real: {
                NodeId mean = g.slice_cols(decoder_out, s.begin, 1);
                NodeId raw = g.slice_cols(decoder_out, s.begin + 1, 1);
                terms.push_back(g.gaussian_nll(mean, raw, Tensor::scalar(d.values[b]),
                                               params.config.sigma_floor));
                break;
            }
            case BlockKind::Binary: {
                NodeId logit = g.slice_cols(decoder_out, s.begin, 1);
                terms.push_back(g.bernoulli_nll(logit, Tensor::scalar(d.values[b])));
                break;
            }
            case BlockKind::Categorical: {
                NodeId logits = g.slice_cols(decoder_out, s.begin, s.len);
                terms.push_back(g.softmax_xent(logits, static_cast<long>(d.values[b])));
                break;
            }
        }
    }
    return g.add_n(terms, std::vector<double>(terms.size(), 1.0));
}

}  // namespace detail

void refresh_latent_cache(ModelParams& params, const std::vector<DesignVector>& catalog) {
    if (params.catalog_ids.empty()) {
        for (const auto& d : catalog) params.catalog_ids.push_back(d.design_id);
    } else {
        if (params.catalog_ids.size() != catalog.size())
            throw std::invalid_argument("catalog size changed under latent cache");
        for (size_t i = 0; i < catalog.size(); ++i)
            if (params.catalog_ids[i] != catalog[i].design_id)
                throw std::invalid_argument("catalog order changed under latent cache");
    }
    params.latent_cache = Tensor({static_cast<long>(catalog.size()), params.config.latent_dim});
    for (size_t i = 0; i < catalog.size(); ++i) {
        const auto enc = encode_design(params, catalog[i]);
        for (int k = 0; k < params.config.latent_dim; ++k)
            params.latent_cache.at(static_cast<long>(i), k) = enc.mu[static_cast<size_t>(k)];
    }
}

EncodeResult encode_design(const ModelParams& params, const DesignVector& d) {
    Graph g;
    auto pn = detail::bind_group(g, params, "enc");
    NodeId x = g.input(design_to_input(params.schema, d));
    auto enc = detail::encoder_graph(g, pn, params, x);
    EncodeResult out;
    out.mu = g.value(enc.mu).vec();
    out.sigma = g.value(enc.sigma).vec();
    return out;
}

LatentSample sample_latent(std::span<const double> mu, std::span<const double> sigma, Rng& rng) {
    if (mu.size() != sigma.size()) throw std::invalid_argument("mu/sigma length mismatch");
    LatentSample s;
    s.mu.assign(mu.begin(), mu.end());
    s.sigma.assign(sigma.begin(), sigma.end());
    for (size_t k = 0; k < mu.size(); ++k) {
        s.z.push_back(rng.normal());
        s.h.push_back(mu[k] + sigma[k] * s.z.back());
    }
    return s;
}

DecodedDesign decode_design(const ModelParams& params, std::span<const double> h) {
    if (static_cast<int>(h.size()) != params.config.latent_dim)
        throw std::invalid_argument("latent dimension mismatch");
    Graph g;
    auto pn = detail::bind_group(g, params, "dec");
    NodeId hin = g.input(Tensor::row({h.begin(), h.end()}));
    NodeId out = detail::decoder_graph(g, pn, params, hin);
    const Tensor& v = g.value(out);

    const auto layout = detail::decoder_layout(params.schema);
    DecodedDesign decoded;
    for (size_t b = 0; b < params.schema.blocks.size(); ++b) {
        const Block& blk = params.schema.blocks[b];
        const auto& s = layout.blocks[b];
        DecodedBlock db;
        db.kind = blk.kind;
        switch (blk.kind) {
            case BlockKind::Real:
                db.mean = v[s.begin];
                db.sigma = std::max(softplus(v[s.begin + 1]), params.config.sigma_floor);
                break;
            case BlockKind::Binary:
                db.p = sigmoid(v[s.begin]);
                break;
            case BlockKind::Categorical: {
                std::vector<double> logits(v.vec().begin() + s.begin, v.vec().begin() + s.begin + s.len);
                db.probs = stable_softmax(logits);
                break;
            }
        }
        decoded.blocks.push_back(std::move(db));
    }
    return decoded;
}

double design_nll(const VariableSchema& schema, const DesignVector& d, const DecodedDesign& decoded) {
    if (decoded.blocks.size() != schema.blocks.size() || d.values.size() != schema.blocks.size())
        throw std::invalid_argument("design_nll block count mismatch");
    double nll = 0.0;
    for (size_t b = 0; b < schema.blocks.size(); ++b) {
        const auto& db = decoded.blocks[b];
        const double x = d.values[b];
        switch (schema.blocks[b].kind) {
            case BlockKind::Real:
                nll -= normal_log_pdf(x, db.mean, db.sigma);
                break;
            case BlockKind::Binary:
                nll -= x != 0.0 ? std::log(db.p) : std::log(1.0 - db.p);
                break;
            case BlockKind::Categorical:
                nll -= std::log(db.probs[static_cast<size_t>(x)]);
                break;
        }
    }
    return nll;
}

std::vector<double> embed_consumer(const ModelParams& params, const ConsumerVector& c) {
    if (static_cast<int>(c.values.size()) != params.consumer_dim)
        throw std::invalid_argument("consumer dimension mismatch");
    Graph g;
    auto pn = detail::bind_group(g, params, "emb");
    NodeId x = g.input(consumer_to_input(c));
    NodeId h = detail::embedder_graph(g, pn, params, x);
    return g.value(h).vec();
}

std::vector<double> choice_logits(std::span<const double> h_c, const Tensor& latents) {
    const long d = latents.rows(), k = latents.cols();
    if (static_cast<long>(h_c.size()) != k) throw std::invalid_argument("choice_logits dim mismatch");
    std::vector<double> logits(static_cast<size_t>(d));
    for (long i = 0; i < d; ++i) {
        double s = 0.0;
        for (long j = 0; j < k; ++j) s += h_c[static_cast<size_t>(j)] * latents.at(i, j);
        logits[static_cast<size_t>(i)] = s;
    }
    return logits;
}

std::vector<double> choice_prob(std::span<const double> h_c, const Tensor& latents) {
    return stable_softmax(choice_logits(h_c, latents));
}

double kl_gauss(std::span<const double> mu, std::span<const double> sigma) {
    if (mu.size() != sigma.size()) throw std::invalid_argument("kl_gauss length mismatch");
    double kl = 0.0;
    for (size_t i = 0; i < mu.size(); ++i)
        kl += 0.5 * (sigma[i] * sigma[i] + mu[i] * mu[i] - 1.0) - std::log(sigma[i]);
    return kl;
}

namespace {

struct ElboGraph {
    Graph g;
    std::map<std::string, NodeId> param_nodes;
    NodeId loss = -1, choice = -1, recon = -1, kl = -1;
};

// Shared elbo construction. z values come from fixed_z when provided,
// otherwise from rng in (design, sample) order.
ElboGraph build_elbo(const ModelParams& params, const Dataset& catalog,
                     std::span<const ChoiceEvent> batch, Rng& rng, const FixedZ* fixed_z) {
    if (batch.empty()) throw std::invalid_argument("elbo on empty batch");
    if (params.latent_cache.rows() != static_cast<long>(catalog.designs.size()))
        throw std::invalid_argument("latent cache does not match catalog");
    const int K = params.config.latent_dim;
    const int S = params.config.mc_samples;

    ElboGraph eg;
    Graph& g = eg.g;
    for (const auto& prefix : {"enc", "dec", "emb"}) {
        auto group = detail::bind_group(g, params, prefix);
        eg.param_nodes.insert(group.begin(), group.end());
    }

    // Unique touched designs in catalog order.
    std::set<int> touched_ids;
    for (const auto& e : batch) touched_ids.insert(e.chosen_design_id);
    std::vector<int> touched_pos;
    for (size_t i = 0; i < catalog.designs.size(); ++i)
        if (touched_ids.count(catalog.designs[i].design_id)) touched_pos.push_back(static_cast<int>(i));
    if (touched_pos.size() != touched_ids.size())
        throw std::invalid_argument("batch references a design outside the catalog");

    auto draw_z = [&](int design_id, int s) {
        std::vector<double> z(static_cast<size_t>(K));
        if (fixed_z) {
            auto it = fixed_z->find(design_id);
            if (it == fixed_z->end() || it->second.size() < static_cast<size_t>((s + 1) * K))
                throw std::invalid_argument("fixed z missing for design " + std::to_string(design_id));
            std::copy_n(it->second.begin() + s * K, K, z.begin());
        } else {
            for (auto& v : z) v = rng.normal();
        }
        return z;
    };

    std::vector<NodeId> recon_terms, kl_terms;
    std::vector<double> recon_coeffs;
    // sample_rows[s][pos] overrides the cached latent row for touched designs.
    std::vector<std::map<int, NodeId>> sample_rows(static_cast<size_t>(S));
    for (int pos : touched_pos) {
        const DesignVector& d = catalog.designs[static_cast<size_t>(pos)];
        NodeId x = g.input(design_to_input(params.schema, d));
        auto enc = detail::encoder_graph(g, eg.param_nodes, params, x);
        kl_terms.push_back(g.kl_std_normal(enc.mu, enc.sigma));
        for (int s = 0; s < S; ++s) {
            NodeId z = g.input(Tensor::row(draw_z(d.design_id, s)));
            NodeId h = g.add(enc.mu, g.mul(enc.sigma, z));
            sample_rows[static_cast<size_t>(s)][pos] = h;
            NodeId out = detail::decoder_graph(g, eg.param_nodes, params, h);
            recon_terms.push_back(detail::design_nll_graph(g, params, out, d));
            recon_coeffs.push_back(1.0 / S);
        }
    }

    std::vector<NodeId> choice_sets(static_cast<size_t>(S));
    for (int s = 0; s < S; ++s) {
        std::vector<NodeId> rows;
        for (long pos = 0; pos < params.latent_cache.rows(); ++pos) {
            auto it = sample_rows[static_cast<size_t>(s)].find(static_cast<int>(pos));
            if (it != sample_rows[static_cast<size_t>(s)].end()) {
                rows.push_back(it->second);
            } else {
                Tensor row({1, static_cast<long>(K)});
                for (int k = 0; k < K; ++k) row[k] = params.latent_cache.at(pos, k);
                rows.push_back(g.input(std::move(row)));
            }
        }
        choice_sets[static_cast<size_t>(s)] = g.row_stack(rows);
    }

    std::vector<NodeId> choice_terms;
    std::vector<double> choice_coeffs;
    std::map<int, NodeId> consumer_nodes;
    for (const auto& e : batch) {
        auto it = consumer_nodes.find(e.consumer_id);
        if (it == consumer_nodes.end()) {
            NodeId x = g.input(consumer_to_input(catalog.consumer_by_id(e.consumer_id)));
            it = consumer_nodes.emplace(e.consumer_id, detail::embedder_graph(g, eg.param_nodes, params, x))
                     .first;
        }
        const int target = catalog.design_pos(e.chosen_design_id);
        for (int s = 0; s < S; ++s) {
            NodeId logits = g.matmul_nt(it->second, choice_sets[static_cast<size_t>(s)]);
            choice_terms.push_back(g.softmax_xent(logits, target));
            choice_coeffs.push_back(1.0 / S);
        }
    }

    eg.choice = g.add_n(choice_terms, choice_coeffs);
    eg.recon = g.add_n(recon_terms, recon_coeffs);
    eg.kl = g.add_n(kl_terms, std::vector<double>(kl_terms.size(), 1.0));
    eg.loss = g.add_n({eg.choice, eg.recon, eg.kl}, {1.0, 1.0, params.config.kl_weight});
    return eg;
}

ElboTerms read_terms(const ElboGraph& eg) {
    ElboTerms t;
    t.choice_nll = eg.g.value_scalar(eg.choice);
    t.recon_nll = eg.g.value_scalar(eg.recon);
    t.kl = eg.g.value_scalar(eg.kl);
    t.loss = eg.g.value_scalar(eg.loss);
    if (!std::isfinite(t.choice_nll)) throw NumericalError("non-finite choice term in elbo");
    if (!std::isfinite(t.recon_nll)) throw NumericalError("non-finite reconstruction term in elbo");
    if (!std::isfinite(t.kl)) throw NumericalError("non-finite KL term in elbo");
    return t;
}

}  // namespace

ElboTerms elbo(const ModelParams& params, const Dataset& catalog, std::span<const ChoiceEvent> batch,
               Rng& rng, const FixedZ* fixed_z) {
    auto eg = build_elbo(params, catalog, batch, rng, fixed_z);
    return read_terms(eg);
}

ElboResult elbo_with_grads(const ModelParams& params, const Dataset& catalog,
                           std::span<const ChoiceEvent> batch, Rng& rng, const FixedZ* fixed_z) {
    auto eg = build_elbo(params, catalog, batch, rng, fixed_z);
    ElboResult res;
    res.terms = read_terms(eg);
    eg.g.backward(eg.loss);
    for (const auto& [name, node] : eg.param_nodes) res.grads[name] = eg.g.grad(node);
    return res;
}

TrainResult train(const Splits& splits, const ModelConfig& cfg) {
    cfg.validate();
    const Dataset& tr = splits.train;
    if (tr.designs.empty() || tr.events.empty()) throw std::invalid_argument("empty training split");

    TrainResult result;
    ModelParams params = init_params(tr.schema, tr.consumer_dim(), cfg);
    refresh_latent_cache(params, tr.designs);

    OptimizerConfig ocfg;
    ocfg.kind = cfg.optimizer == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam;
    ocfg.lr = cfg.lr;
    Optimizer opt(ocfg);
    auto lr_override = [&cfg](const std::string& name) { return cfg.group_lr(param_group(name)); };
    auto frozen = [&cfg](const std::string& name) { return cfg.group_frozen(param_group(name)); };

    Rng rng(derive_seed(cfg.seed, 0x7121));
    std::vector<size_t> order(tr.events.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    auto record_val = [&](int epoch, const ElboTerms& avg) {
        TrainLogEntry entry;
        entry.epoch = epoch;
        entry.loss = avg.loss;
        entry.choice_nll = avg.choice_nll;
        entry.recon_nll = avg.recon_nll;
        entry.kl = avg.kl;
        entry.val_top1 =
            splits.val.events.empty() ? 0.0 : topk_accuracy(params, splits.val, splits.val.events, 1,
                                                            CatalogMode::Existing);
        result.log.push_back(entry);
        if (entry.val_top1 > result.best_val_top1 || result.best_epoch < 0) {
            result.best_val_top1 = entry.val_top1;
            result.best_epoch = epoch;
            result.params = params;
        }
    };

    result.params = params;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        ElboTerms sums;
        size_t n_batches = 0;
        bool aborted = false;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<ChoiceEvent> batch;
            for (size_t i = start; i < stop; ++i) batch.push_back(tr.events[order[i]]);
            try {
                auto res = elbo_with_grads(params, tr, batch, rng);
                for (const auto& [name, grad] : res.grads)
                    if (!grad.all_finite()) throw NumericalError("non-finite gradient for " + name);
                opt.step(params.weights, res.grads, lr_override, frozen);
                params.validate_finite();
                sums.loss += res.terms.loss;
                sums.choice_nll += res.terms.choice_nll;
                sums.recon_nll += res.terms.recon_nll;
                sums.kl += res.terms.kl;
                ++n_batches;
            } catch (const NumericalError& err) {
                result.diverged = true;
                result.divergence_reason = err.what();
                aborted = true;
                break;
            }
        }
        if (aborted) break;
        refresh_latent_cache(params, tr.designs);
        ElboTerms avg = sums;
        if (n_batches > 0) {
            avg.loss /= static_cast<double>(n_batches);
            avg.choice_nll /= static_cast<double>(n_batches);
            avg.recon_nll /= static_cast<double>(n_batches);
            avg.kl /= static_cast<double>(n_batches);
        }
        record_val(epoch, avg);
    }
    if (result.best_epoch < 0) result.params = params;
    return result;
}

GradCheckReport elbo_grad_check(const ModelParams& params, const Dataset& catalog,
                                std::span<const ChoiceEvent> batch, const FixedZ& fixed_z, double h,
                                double tol) {
    Rng unused(0);
    auto eg = build_elbo(params, catalog, batch, unused, &fixed_z);
    return grad_check(eg.g, eg.loss, h, tol);
}

std::string train_log_tsv(const std::vector<TrainLogEntry>& log) {
    std::ostringstream out;
    out << "epoch\tloss\tchoice_nll\trecon_nll\tkl\tval_top1\n";
    char buf[200];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof(buf), "%d\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n", e.epoch, e.loss,
                      e.choice_nll, e.recon_nll, e.kl, e.val_top1);
        out << buf;
    }
    return out.str();
}

namespace {

constexpr char kCkptMagic[8] = {'G', 'F', 'C', 'K', 'P', 'T', '0', '0'};
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw LoadError("truncated checkpoint");
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    const uint32_t len = read_pod<uint32_t>(in);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw LoadError("truncated checkpoint");
    return s;
}

void write_tensor(std::ostream& out, const Tensor& t) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(t.shape().size()));
    for (long d : t.shape()) write_pod<uint64_t>(out, static_cast<uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
}

Tensor read_tensor(std::istream& in) {
    const uint32_t ndim = read_pod<uint32_t>(in);
    std::vector<long> shape;
    for (uint32_t i = 0; i < ndim; ++i) shape.push_back(static_cast<long>(read_pod<uint64_t>(in)));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
    if (!in) throw LoadError("truncated checkpoint tensor");
    return t;
}

VariableSchema schema_from_canonical(const std::string& s) {
    VariableSchema schema;
    size_t start = 0;
    while (start < s.size()) {
        size_t stop = s.find(';', start);
        if (stop == std::string::npos) break;
        const std::string item = s.substr(start, stop - start);
        start = stop + 1;
        std::vector<std::string> parts;
        size_t p = 0;
        while (true) {
            size_t q = item.find(':', p);
            if (q == std::string::npos) {
                parts.push_back(item.substr(p));
                break;
            }
            parts.push_back(item.substr(p, q - p));
            p = q + 1;
        }
        if (parts.size() != 4) throw LoadError("bad schema entry in checkpoint");
        Block b;
        b.name = parts[0];
        b.kind = block_kind_from_string(parts[1]);
        b.cardinality = std::stoi(parts[2]);
        b.channel = channel_from_string(parts[3]);
        schema.blocks.push_back(b);
    }
    return schema;
}

std::string config_to_line(const ModelConfig& c) {
    std::ostringstream out;
    out << c.latent_dim;
    auto dims = [&](const std::vector<int>& v) {
        out << " [";
        for (size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
        out << "]";
    };
    dims(c.encoder_hidden);
    dims(c.decoder_hidden);
    dims(c.embedder_hidden);
    char buf[220];
    std::snprintf(buf, sizeof(buf), " %s %.17g %d %s %.17g %.17g %.17g %.17g %.17g %d %d %llu",
                  c.activation.c_str(), c.kl_weight, c.mc_samples, c.optimizer.c_str(), c.lr,
                  c.lr_encoder, c.lr_decoder, c.lr_embedder, c.sigma_floor, c.epochs, c.batch_size,
                  static_cast<unsigned long long>(c.seed));
    out << buf;
    for (const auto& f : c.freeze) out << " freeze:" << f;
    return out.str();
}

ModelConfig config_from_line(const std::string& line) {
    ModelConfig c;
    std::istringstream in(line);
    auto dims = [&](std::vector<int>& v) {
        std::string tok;
        in >> tok;
        v.clear();
        if (tok.size() < 2 || tok.front() != '[' || tok.back() != ']')
            throw LoadError("bad hidden dims in checkpoint config");
        std::string body = tok.substr(1, tok.size() - 2);
        if (body.empty()) return;
        std::istringstream bs(body);
        std::string piece;
        while (std::getline(bs, piece, ',')) v.push_back(std::stoi(piece));
    };
    in >> c.latent_dim;
    dims(c.encoder_hidden);
    dims(c.decoder_hidden);
    dims(c.embedder_hidden);
    unsigned long long seed = 0;
    in >> c.activation >> c.kl_weight >> c.mc_samples >> c.optimizer >> c.lr >> c.lr_encoder >>
        c.lr_decoder >> c.lr_embedder >> c.sigma_floor >> c.epochs >> c.batch_size >> seed;
    if (!in) throw LoadError("bad checkpoint config line");
    c.seed = seed;
    std::string tok;
    while (in >> tok)
        if (tok.rfind("freeze:", 0) == 0) c.freeze.push_back(tok.substr(7));
    return c;
}

}  // namespace

void checkpoint_save(const ModelParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write checkpoint " + path.string());
    out.write(kCkptMagic, sizeof(kCkptMagic));
    write_pod<uint32_t>(out, kCkptVersion);
    write_pod<uint32_t>(out, static_cast<uint32_t>(params.config.latent_dim));
    write_pod<uint64_t>(out, params.schema.hash());
    write_pod<uint32_t>(out, static_cast<uint32_t>(params.consumer_dim));
    write_string(out, params.schema.canonical_string());
    write_string(out, config_to_line(params.config));

    write_pod<uint32_t>(out, static_cast<uint32_t>(params.catalog_ids.size()));
    for (int id : params.catalog_ids) write_pod<int64_t>(out, id);
    write_tensor(out, params.latent_cache);

    write_pod<uint32_t>(out, static_cast<uint32_t>(params.weights.size()));
    for (const auto& [name, t] : params.weights) {
        write_string(out, name);
        write_tensor(out, t);
    }
}

ModelParams checkpoint_load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw LoadError("not a checkpoint file: " + path.string());
    const uint32_t version = read_pod<uint32_t>(in);
    if (version != kCkptVersion)
        throw LoadError("unsupported checkpoint version " + std::to_string(version));
    const uint32_t k = read_pod<uint32_t>(in);
    const uint64_t schema_hash = read_pod<uint64_t>(in);
    const uint32_t consumer_dim = read_pod<uint32_t>(in);

    ModelParams params;
    params.schema = schema_from_canonical(read_string(in));
    params.config = config_from_line(read_string(in));
    params.consumer_dim = static_cast<int>(consumer_dim);
    if (params.schema.hash() != schema_hash) throw LoadError("checkpoint schema hash mismatch");
    if (static_cast<uint32_t>(params.config.latent_dim) != k)
        throw LoadError("checkpoint latent dim mismatch");

    const uint32_t n_catalog = read_pod<uint32_t>(in);
    for (uint32_t i = 0; i < n_catalog; ++i)
        params.catalog_ids.push_back(static_cast<int>(read_pod<int64_t>(in)));
    params.latent_cache = read_tensor(in);

    const uint32_t n_weights = read_pod<uint32_t>(in);
    for (uint32_t i = 0; i < n_weights; ++i) {
        std::string name = read_string(in);
        params.weights[name] = read_tensor(in);
    }
    return params;
}

}  // namespace gapfind
