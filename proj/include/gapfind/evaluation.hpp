#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "gapfind/choice_vae.hpp"

namespace gapfind {

struct SampleResult;  // gap_sampler.hpp

enum class CatalogMode {
    Existing,   // rank over the model's cached catalog
    Insertion,  // rank over catalog + the event's (held-out) true design
};

// Fraction of events whose true design is among the k highest-probability
// designs; ties broken toward the lowest design_id. Insertion mode encodes
// the event's design and adds it to the choice set as design D+1.
double topk_accuracy(const ModelParams& params, const Dataset& ds, std::span<const ChoiceEvent> events,
                     int k, CatalogMode mode);

struct FeasibilityEvalResult {
    double heldin_mean = 0.0;
    double heldout_mean = 0.0;
    std::vector<double> heldin_nlls;
    std::vector<double> heldout_nlls;
};

FeasibilityEvalResult feasibility_eval(const ModelParams& params,
                                       std::span<const DesignVector> heldin,
                                       std::span<const DesignVector> heldout, int n_samples,
                                       uint64_t seed);

struct GapEvalResult {
    double msqe_accepted = 0.0;
    double msqe_random = 0.0;
    long n_accepted = 0;
    long n_random = 0;  // feasibility-passing candidates
};

// Latent-space MSqE of candidates to the nearest induced gap: accepted
// candidates vs all feasibility-passing candidates.
GapEvalResult gap_eval(const ModelParams& params, const SampleResult& sample,
                       std::span<const DesignVector> induced_gaps);

struct Histogram {
    std::vector<double> edges;         // bins + 1, over [0,1]
    std::vector<double> induced_mass;  // sums to 1 when the group is nonempty
    std::vector<double> sampled_mass;

    std::string to_tsv() const;
};

Histogram rho2_histogram(std::span<const double> induced, std::span<const double> sampled, int bins = 20);

// Per-stage metric table; values accumulate one entry per seed and report
// mean plus sample std-dev when two or more seeds are present.
struct EvalReport {
    std::string stage;
    uint64_t config_hash = 0;
    bool flagged = false;
    std::string flag_reason;

    void add(const std::string& name, double value);
    double mean(const std::string& name) const;
    double stddev(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }
    const std::vector<double>& seed_values(const std::string& name) const;

    std::string to_tsv() const;

private:
    std::vector<std::string> order_;
    std::map<std::string, std::vector<double>> values_;
};

}  // namespace gapfind
