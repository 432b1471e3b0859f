#pragma once

#include <optional>
#include <span>
#include <variant>

#include "gapfind/choice_vae.hpp"

namespace gapfind {

enum class BaselineKind { Uniform, MarketShare };

struct GapConfig {
    double gamma1 = 0.0;  // feasibility NLL gate
    double gamma2 = 0.0;  // rho^2 gate, in [0,1]
    double gamma_s = 0.0; // early-termination cutoff on subset rho^2
    int consumer_subset = 0;  // C_sub, 0 = all consumers
    int n_candidates = 100;   // total candidates examined
    int importance_samples = 128;  // S for the marginal estimate
    uint64_t seed = 1;
    BaselineKind baseline = BaselineKind::Uniform;
    bool early_termination = false;
    double gamma1_percentile = 95.0;
    double gamma2_percentile = 50.0;
    int calibration_candidates = 100;

    void validate() const;
};

// -log of the S-sample importance-weighted marginal p(x_d), proposal
// q(h|x_d), joint decoder x standard-normal prior, combined in log space.
double feasibility_nll(const ModelParams& params, const DesignVector& d, int n_samples, Rng& rng);

// Choice context shared by the rho^2 evaluations: the held-in catalog
// latents plus embeddings for the consumer set under consideration.
struct RhoContext {
    Tensor catalog_latents;      // (D, K)
    Tensor consumer_embeddings;  // (C, K)
    std::vector<int> consumer_ids;
    double baseline_prob = 0.0;  // p0 for the inserted candidate

    long n_consumers() const { return consumer_embeddings.rows(); }
};

RhoContext make_rho_context(const ModelParams& params, std::span<const ConsumerVector> consumers,
                            BaselineKind baseline, long n_events_for_share = 0);

// delta assignment: explicit purchaser rows (induced gaps with real
// purchases), or model endorsement (candidate ranks Top-1 over the D+1 set).
struct DeltaPurchasers {
    std::vector<long> consumer_rows;
};
struct DeltaModelEndorsement {};
using DeltaRule = std::variant<DeltaPurchasers, DeltaModelEndorsement>;

struct RhoResult {
    double value = 0.0;
    bool clamped = false;  // raw ratio was below 0
    long n_delta = 0;
};

class RhoUndefinedError : public std::runtime_error {
public:
    explicit RhoUndefinedError(const std::string& what) : std::runtime_error(what) {}
};

// Normalized information gain of the model over the baseline across the
// consumers with delta = 1; throws RhoUndefinedError when no consumer
// qualifies. The probability form takes p* values directly; the context
// form below computes them from the model.
double rho_squared_from_probs(std::span<const double> p_star, double p0);
RhoResult rho_squared(const RhoContext& ctx, std::span<const double> h_candidate, const DeltaRule& rule);

// rho^2 restricted to the first subset_size consumer rows; an empty delta
// set scores 0 rather than throwing (the subset may simply miss all
// endorsers). subset_size <= 0 means all rows.
RhoResult rho_squared_subset(const RhoContext& ctx, std::span<const double> h_candidate,
                             long subset_size, const DeltaRule& rule);

// Subset pre-screen: evaluates rho^2 on the first subset_size consumers and
// rejects (nullopt) below gamma_s without the full pass; otherwise returns
// the full evaluation. full_evals, when given, counts full passes.
std::optional<RhoResult> rho_squared_early(const RhoContext& ctx, std::span<const double> h_candidate,
                                           double gamma_s, long subset_size, const DeltaRule& rule,
                                           long* full_evals = nullptr);

struct GapCandidate {
    enum class Status { RejectedFeasibility, RejectedRho2, Accepted };
    // Encoder mean of the decoded concept; the prior draw only proposes it.
    std::vector<double> latent;
    DesignVector decoded;  // modal decode: real mean, binary/categorical argmax
    double feasibility_nll = 0.0;
    std::optional<double> rho2;  // present iff feasibility passed
    Status status = Status::RejectedFeasibility;
    bool rho2_clamped = false;
    bool unrankable = false;      // no consumer endorsed the candidate
    bool early_rejected = false;  // rho2 holds the subset estimate
};

struct SampleResult {
    std::vector<GapCandidate> candidates;
    std::vector<size_t> accepted;
    long n_feasibility_rejected = 0;
    long n_rho_rejected = 0;
    long n_early_rejected = 0;
    long n_unrankable = 0;
    long n_clamped = 0;

    std::string report_tsv(const GapConfig& cfg) const;
};

// Algorithm: draw h ~ N(0, I), decode modally, gate on feasibility NLL
// (gamma1), then on rho^2 (gamma2, optional early termination). Candidate i
// uses rng substream (seed, i), so the stream is reproducible.
SampleResult sample_gap_candidates(const ModelParams& params, const Dataset& consumers_src,
                                   const GapConfig& cfg);

struct Thresholds {
    double gamma1 = 0.0;
    double gamma2 = 0.0;
    double gamma_s = 0.0;
};

// gamma1: percentile of feasibility NLL over held-in + validation-gap
// designs; gamma2: percentile of rho^2 over validation gaps (real
// purchasers); gamma_s: largest cutoff keeping >= 90% verdict agreement on
// calibration candidates.
Thresholds calibrate_thresholds(const ModelParams& params, const Splits& splits, const GapConfig& cfg);

// Modal decode of a latent point into a design vector.
DesignVector modal_decode(const ModelParams& params, std::span<const double> h, int design_id);

// min over gap rows of squared euclidean distance, divided by K.
double latent_msqe(std::span<const double> h, const Tensor& gap_latents);

}  // namespace gapfind
