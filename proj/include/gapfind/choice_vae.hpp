#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "gapfind/dataset.hpp"
#include "gapfind/graph.hpp"
#include "gapfind/rng.hpp"
#include "gapfind/tensor.hpp"

namespace gapfind {

struct ModelConfig {
    int latent_dim = 8;  // K
    std::vector<int> encoder_hidden{64};
    std::vector<int> decoder_hidden{64};
    std::vector<int> embedder_hidden{64};
    std::string activation = "tanh";  // or "relu"
    double kl_weight = 1.0;           // lambda_1, scales the KL term only
    int mc_samples = 1;               // S
    std::string optimizer = "adam";
    double lr = 3e-3;
    double lr_encoder = -1.0;  // < 0: use lr
    double lr_decoder = -1.0;
    double lr_embedder = -1.0;
    std::vector<std::string> freeze;  // parameter groups: enc, dec, emb
    int epochs = 40;
    int batch_size = 32;
    double sigma_floor = 1e-2;  // stddev floor, variance floor 1e-4
    uint64_t seed = 1;

    void validate() const;
    double group_lr(const std::string& group) const;
    bool group_frozen(const std::string& group) const;
};

// All weights plus the cached latent means of the existing-design catalog
// (row d of latent_cache is the encoder mean of catalog_ids[d]).
struct ModelParams {
    VariableSchema schema;
    int consumer_dim = 0;
    ModelConfig config;
    std::map<std::string, Tensor> weights;  // name -> tensor, group = name prefix
    Tensor latent_cache;                    // (D, K)
    std::vector<int> catalog_ids;

    int catalog_pos(int design_id) const;  // -1 if absent
    void validate_finite() const;
};

std::string param_group(const std::string& name);

ModelParams init_params(const VariableSchema& schema, int consumer_dim, const ModelConfig& cfg);

// Re-encodes the catalog and stores the latent means. Catalog order defines
// row order and must match params.catalog_ids once set.
void refresh_latent_cache(ModelParams& params, const std::vector<DesignVector>& catalog);

// One-hot design expansion for the encoder input (reals pass through).
Tensor design_to_input(const VariableSchema& schema, const DesignVector& d);
Tensor consumer_to_input(const ConsumerVector& c);

struct EncodeResult {
    std::vector<double> mu;
    std::vector<double> sigma;
};
EncodeResult encode_design(const ModelParams& params, const DesignVector& d);

struct LatentSample {
    std::vector<double> h, z, mu, sigma;
};
LatentSample sample_latent(std::span<const double> mu, std::span<const double> sigma, Rng& rng);

struct DecodedBlock {
    BlockKind kind = BlockKind::Real;
    double mean = 0.0, sigma = 1.0;  // real
    double p = 0.5;                  // binary
    std::vector<double> probs;       // categorical
};
struct DecodedDesign {
    std::vector<DecodedBlock> blocks;
};
DecodedDesign decode_design(const ModelParams& params, std::span<const double> h);

double design_nll(const VariableSchema& schema, const DesignVector& d, const DecodedDesign& decoded);

std::vector<double> embed_consumer(const ModelParams& params, const ConsumerVector& c);

// logits[d] = h_c . H[d]; H rows are design latents.
std::vector<double> choice_logits(std::span<const double> h_c, const Tensor& latents);
std::vector<double> choice_prob(std::span<const double> h_c, const Tensor& latents);

double kl_gauss(std::span<const double> mu, std::span<const double> sigma);

struct ElboTerms {
    double loss = 0.0;
    double choice_nll = 0.0;
    double recon_nll = 0.0;
    double kl = 0.0;
};
struct ElboResult {
    ElboTerms terms;
    std::map<std::string, Tensor> grads;
};

// design_id -> flattened z draws (mc_samples * K).
using FixedZ = std::map<int, std::vector<double>>;

// One-sample (or S-sample) estimator of the negative ELBO over a batch of
// events: choice NLL per event plus reconstruction NLL and lambda_1-weighted
// KL per unique design touched by the batch. Catalog designs outside the
// batch contribute their cached latent rows to the choice softmax.
ElboTerms elbo(const ModelParams& params, const Dataset& catalog, std::span<const ChoiceEvent> batch,
               Rng& rng, const FixedZ* fixed_z = nullptr);
ElboResult elbo_with_grads(const ModelParams& params, const Dataset& catalog,
                           std::span<const ChoiceEvent> batch, Rng& rng, const FixedZ* fixed_z = nullptr);

struct TrainLogEntry {
    int epoch = 0;
    double loss = 0.0, choice_nll = 0.0, recon_nll = 0.0, kl = 0.0;
    double val_top1 = 0.0;
};
struct TrainResult {
    ModelParams params;  // best-validation checkpoint
    std::vector<TrainLogEntry> log;
    bool diverged = false;
    std::string divergence_reason;
    int best_epoch = -1;
    double best_val_top1 = 0.0;
};

TrainResult train(const Splits& splits, const ModelConfig& cfg);

std::string train_log_tsv(const std::vector<TrainLogEntry>& log);

// Central finite differences over the full ELBO tape (fixed z, so the
// stochastic path is identical across perturbed evaluations).
GradCheckReport elbo_grad_check(const ModelParams& params, const Dataset& catalog,
                                std::span<const ChoiceEvent> batch, const FixedZ& fixed_z,
                                double h = 1e-5, double tol = 1e-4);

void checkpoint_save(const ModelParams& params, const std::filesystem::path& path);
ModelParams checkpoint_load(const std::filesystem::path& path);

namespace detail {

// Graph builders shared by elbo, the plain wrappers above and the samplers.
std::map<std::string, NodeId> bind_group(Graph& g, const ModelParams& params, const std::string& prefix);

struct EncoderNodes {
    NodeId mu, sigma;
};
EncoderNodes encoder_graph(Graph& g, const std::map<std::string, NodeId>& pn, const ModelParams& params,
                           NodeId x);
NodeId decoder_graph(Graph& g, const std::map<std::string, NodeId>& pn, const ModelParams& params, NodeId h);
NodeId embedder_graph(Graph& g, const std::map<std::string, NodeId>& pn, const ModelParams& params, NodeId x);
// Sum of per-block NLL terms of the decoder output vector against a design.
NodeId design_nll_graph(Graph& g, const ModelParams& params, NodeId decoder_out, const DesignVector& d);

struct DecoderLayout {
    struct Slice {
        long begin = 0, len = 0;
    };
    std::vector<Slice> blocks;
    long total = 0;
};
DecoderLayout decoder_layout(const VariableSchema& schema);

}  // namespace detail

}  // namespace gapfind
