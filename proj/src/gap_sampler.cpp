#include "gapfind/gap_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "gapfind/mathutil.hpp"

namespace gapfind {

void GapConfig::validate() const {
    if (gamma2 < 0.0 || gamma2 > 1.0) throw std::invalid_argument("gamma2 must be in [0,1]");
    if (n_candidates < 1) throw std::invalid_argument("n_candidates must be >= 1");
    if (importance_samples < 1) throw std::invalid_argument("importance_samples must be >= 1");
    if (consumer_subset < 0) throw std::invalid_argument("consumer_subset must be >= 0");
    if (gamma1_percentile < 0 || gamma1_percentile > 100 || gamma2_percentile < 0 ||
        gamma2_percentile > 100)
        throw std::invalid_argument("calibration percentiles must be in [0,100]");
    if (calibration_candidates < 1) throw std::invalid_argument("calibration_candidates must be >= 1");
}

double feasibility_nll(const ModelParams& params, const DesignVector& d, int n_samples, Rng& rng) {
    const int K = params.config.latent_dim;
    const auto enc = encode_design(params, d);

    // One decoder tape, re-forwarded per sample with a new h.
    Graph g;
    auto pn = detail::bind_group(g, params, "dec");
    NodeId h_in = g.input(Tensor({1, static_cast<long>(K)}));
    NodeId out = detail::decoder_graph(g, pn, params, h_in);
    NodeId nll = detail::design_nll_graph(g, params, out, d);

    std::vector<double> log_w(static_cast<size_t>(n_samples));
    for (int s = 0; s < n_samples; ++s) {
        double log_q = 0.0, log_prior = 0.0;
        Tensor& h = g.mutable_value(h_in);
        for (int k = 0; k < K; ++k) {
            const double z = rng.normal();
            const double hk = enc.mu[static_cast<size_t>(k)] + enc.sigma[static_cast<size_t>(k)] * z;
            h[k] = hk;
            log_q += normal_log_pdf(hk, enc.mu[static_cast<size_t>(k)], enc.sigma[static_cast<size_t>(k)]);
            log_prior += normal_log_pdf(hk, 0.0, 1.0);
        }
        const double log_px_given_h = -g.forward(nll);
        log_w[static_cast<size_t>(s)] = log_px_given_h + log_prior - log_q;
    }
    return -(log_sum_exp(log_w) - std::log(static_cast<double>(n_samples)));
}

RhoContext make_rho_context(const ModelParams& params, std::span<const ConsumerVector> consumers,
                            BaselineKind baseline, long n_events_for_share) {
    RhoContext ctx;
    ctx.catalog_latents = params.latent_cache;
    const int K = params.config.latent_dim;
    ctx.consumer_embeddings = Tensor({static_cast<long>(consumers.size()), static_cast<long>(K)});
    for (size_t c = 0; c < consumers.size(); ++c) {
        const auto h = embed_consumer(params, consumers[c]);
        for (int k = 0; k < K; ++k) ctx.consumer_embeddings.at(static_cast<long>(c), k) = h[static_cast<size_t>(k)];
        ctx.consumer_ids.push_back(consumers[c].consumer_id);
    }
    const long d_plus_1 = ctx.catalog_latents.rows() + 1;
    if (baseline == BaselineKind::Uniform) {
        ctx.baseline_prob = 1.0 / static_cast<double>(d_plus_1);
    } else {
        if (n_events_for_share < 1)
            throw std::invalid_argument("market-share baseline needs the event count");
        ctx.baseline_prob = 1.0 / static_cast<double>(n_events_for_share + 1);
    }
    return ctx;
}

double rho_squared_from_probs(std::span<const double> p_star, double p0) {
    if (p_star.empty()) throw RhoUndefinedError("undefined rho2: no consumer with delta = 1");
    if (p0 <= 0.0 || p0 >= 1.0) throw std::invalid_argument("baseline probability must be in (0,1)");
    double num = 0.0;
    const double den_term = std::log(1.0 / p0);
    for (double p : p_star) num += std::log(p / p0);
    return num / (den_term * static_cast<double>(p_star.size()));
}

namespace {

// Candidate probability for one consumer row over the D+1 choice set,
// plus whether the candidate is that consumer's Top-1 (existing designs
// win ties).
struct CandidateScore {
    double p_candidate = 0.0;
    bool top1 = false;
};

CandidateScore score_candidate(const RhoContext& ctx, long row, std::span<const double> h_candidate) {
    const long d = ctx.catalog_latents.rows();
    const long k = ctx.catalog_latents.cols();
    std::vector<double> logits(static_cast<size_t>(d + 1));
    for (long i = 0; i < d; ++i) {
        double s = 0.0;
        for (long j = 0; j < k; ++j) s += ctx.consumer_embeddings.at(row, j) * ctx.catalog_latents.at(i, j);
        logits[static_cast<size_t>(i)] = s;
    }
    double s = 0.0;
    for (long j = 0; j < k; ++j) s += ctx.consumer_embeddings.at(row, j) * h_candidate[static_cast<size_t>(j)];
    logits[static_cast<size_t>(d)] = s;

    const auto probs = stable_softmax(logits);
    CandidateScore out;
    out.p_candidate = probs[static_cast<size_t>(d)];
    out.top1 = true;
    for (long i = 0; i < d; ++i)
        if (probs[static_cast<size_t>(i)] >= out.p_candidate) {
            out.top1 = false;
            break;
        }
    return out;
}

RhoResult rho_over_rows(const RhoContext& ctx, std::span<const double> h_candidate,
                        const DeltaRule& rule, long limit_rows) {
    const long n = limit_rows > 0 ? std::min(limit_rows, ctx.n_consumers()) : ctx.n_consumers();
    std::vector<double> p_star;
    if (const auto* purchasers = std::get_if<DeltaPurchasers>(&rule)) {
        for (long row : purchasers->consumer_rows) {
            if (row < 0 || row >= n) continue;
            p_star.push_back(score_candidate(ctx, row, h_candidate).p_candidate);
        }
    } else {
        for (long row = 0; row < n; ++row) {
            const auto sc = score_candidate(ctx, row, h_candidate);
            if (sc.top1) p_star.push_back(sc.p_candidate);
        }
    }
    RhoResult res;
    res.n_delta = static_cast<long>(p_star.size());
    const double raw = rho_squared_from_probs(p_star, ctx.baseline_prob);
    res.value = raw;
    if (raw < 0.0) {
        res.value = 0.0;
        res.clamped = true;
    }
    return res;
}

}  // namespace

RhoResult rho_squared(const RhoContext& ctx, std::span<const double> h_candidate, const DeltaRule& rule) {
    return rho_over_rows(ctx, h_candidate, rule, 0);
}

RhoResult rho_squared_subset(const RhoContext& ctx, std::span<const double> h_candidate, long subset_size,
                             const DeltaRule& rule) {
    try {
        return rho_over_rows(ctx, h_candidate, rule, subset_size);
    } catch (const RhoUndefinedError&) {
        return RhoResult{};  // nobody in the subset endorses the candidate
    }
}

std::optional<RhoResult> rho_squared_early(const RhoContext& ctx, std::span<const double> h_candidate,
                                           double gamma_s, long subset_size, const DeltaRule& rule,
                                           long* full_evals) {
    if (subset_size > 0 && subset_size < ctx.n_consumers()) {
        if (rho_squared_subset(ctx, h_candidate, subset_size, rule).value < gamma_s) return std::nullopt;
    }
    if (full_evals) ++*full_evals;
    return rho_squared(ctx, h_candidate, rule);
}

DesignVector modal_decode(const ModelParams& params, std::span<const double> h, int design_id) {
    const auto decoded = decode_design(params, h);
    DesignVector d;
    d.design_id = design_id;
    for (size_t b = 0; b < decoded.blocks.size(); ++b) {
        const auto& db = decoded.blocks[b];
        switch (db.kind) {
            case BlockKind::Real:
                d.values.push_back(db.mean);
                break;
            case BlockKind::Binary:
                d.values.push_back(db.p > 0.5 ? 1.0 : 0.0);
                break;
            case BlockKind::Categorical: {
                size_t best = 0;
                for (size_t i = 1; i < db.probs.size(); ++i)
                    if (db.probs[i] > db.probs[best]) best = i;
                d.values.push_back(static_cast<double>(best));
                break;
            }
        }
    }
    return d;
}

SampleResult sample_gap_candidates(const ModelParams& params, const Dataset& consumers_src,
                                   const GapConfig& cfg) {
    cfg.validate();
    if (params.latent_cache.numel() == 0) throw std::invalid_argument("model has no latent cache");
    const int K = params.config.latent_dim;

    RhoContext ctx = make_rho_context(params, consumers_src.consumers, cfg.baseline,
                                      static_cast<long>(consumers_src.events.size()));
    SampleResult result;

    for (int i = 0; i < cfg.n_candidates; ++i) {
        Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(i)));
        GapCandidate cand;
        // The prior draw only proposes a concept; the candidate entering the
        // choice set is the decoded design re-encoded, the same latent any
        // existing design would get.
        const auto draw = rng.normal_vec(static_cast<size_t>(K));
        cand.decoded = modal_decode(params, draw, i);
        cand.latent = encode_design(params, cand.decoded).mu;
        cand.feasibility_nll = feasibility_nll(params, cand.decoded, cfg.importance_samples, rng);

        if (cand.feasibility_nll > cfg.gamma1) {
            cand.status = GapCandidate::Status::RejectedFeasibility;
            ++result.n_feasibility_rejected;
            result.candidates.push_back(std::move(cand));
            continue;
        }

        RhoResult rho;
        if (cfg.early_termination && cfg.consumer_subset > 0 &&
            cfg.consumer_subset < ctx.n_consumers()) {
            const auto subset = rho_squared_subset(ctx, cand.latent, cfg.consumer_subset,
                                                   DeltaModelEndorsement{});
            if (subset.value < cfg.gamma_s) {
                rho = subset;  // rho2 records the subset estimate
                cand.early_rejected = true;
                ++result.n_early_rejected;
            }
        }
        if (!cand.early_rejected) {
            try {
                rho = rho_squared(ctx, cand.latent, DeltaModelEndorsement{});
            } catch (const RhoUndefinedError&) {
                cand.unrankable = true;
                ++result.n_unrankable;
                rho = RhoResult{};
            }
        }
        cand.rho2 = rho.value;
        cand.rho2_clamped = rho.clamped;
        if (rho.clamped) ++result.n_clamped;

        if (cand.early_rejected || rho.value < cfg.gamma2) {
            cand.status = GapCandidate::Status::RejectedRho2;
            ++result.n_rho_rejected;
        } else {
            cand.status = GapCandidate::Status::Accepted;
            result.accepted.push_back(result.candidates.size());
        }
        result.candidates.push_back(std::move(cand));
    }
    return result;
}

Thresholds calibrate_thresholds(const ModelParams& params, const Splits& splits, const GapConfig& cfg) {
    cfg.validate();
    Thresholds th;

    // gamma1 from the feasibility NLL of designs the model should consider
    // buildable: the held-in catalog plus the validation gaps.
    std::vector<double> nlls;
    {
        std::vector<const DesignVector*> designs;
        for (const auto& d : splits.train.designs) designs.push_back(&d);
        for (const auto& d : splits.gap_val.designs) designs.push_back(&d);
        if (designs.empty()) throw std::invalid_argument("no designs to calibrate gamma1 on");
        for (size_t i = 0; i < designs.size(); ++i) {
            Rng rng(derive_seed(cfg.seed, 0xfea50000ULL + i));
            nlls.push_back(feasibility_nll(params, *designs[i], cfg.importance_samples, rng));
        }
        th.gamma1 = percentile(nlls, cfg.gamma1_percentile);
    }

    // gamma2 from rho^2 of the validation gaps inserted like candidates:
    // model-endorsement delta over the sampling consumer pool, so the
    // threshold lives on the same scale it later gates.
    {
        std::vector<double> rhos;
        RhoContext ctx = make_rho_context(params, splits.train.consumers, cfg.baseline,
                                          static_cast<long>(splits.train.events.size()));
        for (const auto& gap : splits.gap_val.designs) {
            const auto enc = encode_design(params, gap);
            try {
                rhos.push_back(rho_squared(ctx, enc.mu, DeltaModelEndorsement{}).value);
            } catch (const RhoUndefinedError&) {
                rhos.push_back(0.0);
            }
        }
        th.gamma2 = rhos.empty() ? 0.0 : percentile(rhos, cfg.gamma2_percentile);
    }

    // gamma_s: largest cutoff whose early verdicts agree with full-rho2
    // thresholding on >= 95% of feasibility-passing calibration candidates;
    // the extra margin keeps fresh candidate streams above the 90% contract.
    th.gamma_s = 0.0;
    if (cfg.early_termination && cfg.consumer_subset > 0) {
        RhoContext ctx = make_rho_context(params, splits.train.consumers, cfg.baseline,
                                          static_cast<long>(splits.train.events.size()));
        std::vector<std::pair<double, double>> pairs;  // (subset, full)
        for (int i = 0; i < cfg.calibration_candidates; ++i) {
            Rng rng(derive_seed(cfg.seed, 0xca1b0000ULL + static_cast<uint64_t>(i)));
            const auto h = rng.normal_vec(static_cast<size_t>(params.config.latent_dim));
            const auto decoded = modal_decode(params, h, -1);
            if (feasibility_nll(params, decoded, cfg.importance_samples, rng) > th.gamma1) continue;
            const double sub =
                rho_squared_subset(ctx, h, cfg.consumer_subset, DeltaModelEndorsement{}).value;
            double full = 0.0;
            try {
                full = rho_squared(ctx, h, DeltaModelEndorsement{}).value;
            } catch (const RhoUndefinedError&) {
                full = 0.0;
            }
            pairs.emplace_back(sub, full);
        }
        if (!pairs.empty()) {
            std::vector<double> cutoffs{0.0};
            for (const auto& [sub, full] : pairs) cutoffs.push_back(sub);
            std::sort(cutoffs.begin(), cutoffs.end());
            cutoffs.erase(std::unique(cutoffs.begin(), cutoffs.end()), cutoffs.end());
            for (auto it = cutoffs.rbegin(); it != cutoffs.rend(); ++it) {
                long agree = 0;
                for (const auto& [sub, full] : pairs)
                    if (sub >= *it || full < th.gamma2) ++agree;
                if (static_cast<double>(agree) >= 0.95 * static_cast<double>(pairs.size())) {
                    th.gamma_s = *it;
                    break;
                }
            }
        }
    }
    return th;
}

double latent_msqe(std::span<const double> h, const Tensor& gap_latents) {
    const long n = gap_latents.rows(), k = gap_latents.cols();
    if (n == 0) throw std::invalid_argument("latent_msqe with no gap designs");
    double best = std::numeric_limits<double>::infinity();
    for (long i = 0; i < n; ++i) {
        double d2 = 0.0;
        for (long j = 0; j < k; ++j) {
            const double diff = h[static_cast<size_t>(j)] - gap_latents.at(i, j);
            d2 += diff * diff;
        }
        best = std::min(best, d2);
    }
    return best / static_cast<double>(k);
}

std::string SampleResult::report_tsv(const GapConfig& cfg) const {
    std::ostringstream out;
    out << "# n_candidates=" << cfg.n_candidates << " gamma1=" << cfg.gamma1 << " gamma2=" << cfg.gamma2
        << " accepted=" << accepted.size() << " feasibility_rejected=" << n_feasibility_rejected
        << " rho_rejected=" << n_rho_rejected << " early_rejected=" << n_early_rejected
        << " unrankable=" << n_unrankable << " clamped=" << n_clamped << "\n";
    out << "index\tstatus\tfeasibility_nll\trho2\tearly\tlatent\tdecoded\n";
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (size_t i = 0; i < candidates.size(); ++i) {
        const auto& c = candidates[i];
        const char* status = c.status == GapCandidate::Status::Accepted              ? "accepted"
                             : c.status == GapCandidate::Status::RejectedFeasibility ? "rejected_feasibility"
                                                                                     : "rejected_rho2";
        out << i << '\t' << status << '\t' << fmt(c.feasibility_nll) << '\t'
            << (c.rho2 ? fmt(*c.rho2) : std::string("-")) << '\t' << (c.early_rejected ? 1 : 0) << '\t';
        for (size_t j = 0; j < c.latent.size(); ++j) out << (j ? "," : "") << fmt(c.latent[j]);
        out << '\t';
        for (size_t j = 0; j < c.decoded.values.size(); ++j)
            out << (j ? "," : "") << fmt(c.decoded.values[j]);
        out << '\n';
    }
    return out.str();
}

}  // namespace gapfind
