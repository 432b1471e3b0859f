#include "gapfind/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "gapfind/gap_sampler.hpp"
#include "gapfind/mathutil.hpp"

namespace gapfind {

namespace {

// Positions of the k most probable designs, ties toward lower design_id.
std::vector<size_t> topk_positions(std::span<const double> probs, std::span<const int> ids, int k) {
    std::vector<size_t> idx(probs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return ids[a] < ids[b];
    });
    idx.resize(std::min<size_t>(static_cast<size_t>(k), idx.size()));
    return idx;
}

}  // namespace

double topk_accuracy(const ModelParams& params, const Dataset& ds, std::span<const ChoiceEvent> events,
                     int k, CatalogMode mode) {
    if (k < 1) throw std::invalid_argument("topk_accuracy needs k >= 1");
    if (events.empty()) return 0.0;
    if (params.latent_cache.numel() == 0) throw std::invalid_argument("model has no latent cache");

    const long d = params.latent_cache.rows();
    const long kk = params.latent_cache.cols();

    std::map<int, std::vector<double>> embeddings;
    auto embed_of = [&](int consumer_id) -> const std::vector<double>& {
        auto it = embeddings.find(consumer_id);
        if (it == embeddings.end())
            it = embeddings.emplace(consumer_id, embed_consumer(params, ds.consumer_by_id(consumer_id)))
                     .first;
        return it->second;
    };

    // Insertion mode re-encodes each event's true design once.
    std::map<int, std::vector<double>> inserted;
    auto latent_of = [&](int design_id) -> const std::vector<double>& {
        auto it = inserted.find(design_id);
        if (it == inserted.end())
            it = inserted.emplace(design_id, encode_design(params, ds.design_by_id(design_id)).mu).first;
        return it->second;
    };

    long hits = 0;
    for (const auto& e : events) {
        const auto& h_c = embed_of(e.consumer_id);
        std::vector<double> logits;
        std::vector<int> ids;
        logits.reserve(static_cast<size_t>(d) + 1);
        for (long i = 0; i < d; ++i) {
            double s = 0.0;
            for (long j = 0; j < kk; ++j) s += h_c[static_cast<size_t>(j)] * params.latent_cache.at(i, j);
            logits.push_back(s);
            ids.push_back(params.catalog_ids[static_cast<size_t>(i)]);
        }
        if (mode == CatalogMode::Insertion) {
            if (params.catalog_pos(e.chosen_design_id) >= 0)
                throw std::invalid_argument("insertion mode event references a catalog design");
            const auto& h_d = latent_of(e.chosen_design_id);
            double s = 0.0;
            for (long j = 0; j < kk; ++j) s += h_c[static_cast<size_t>(j)] * h_d[static_cast<size_t>(j)];
            logits.push_back(s);
            ids.push_back(e.chosen_design_id);
        } else if (params.catalog_pos(e.chosen_design_id) < 0) {
            throw std::invalid_argument("existing-mode event references design " +
                                        std::to_string(e.chosen_design_id) + " outside the catalog");
        }
        const auto probs = stable_softmax(logits);
        for (size_t pos : topk_positions(probs, ids, k)) {
            if (ids[pos] == e.chosen_design_id) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(events.size());
}

FeasibilityEvalResult feasibility_eval(const ModelParams& params, std::span<const DesignVector> heldin,
                                       std::span<const DesignVector> heldout, int n_samples,
                                       uint64_t seed) {
    FeasibilityEvalResult res;
    // Substream keyed by the design id alone, so a design scores the same
    // whichever list it appears in.
    auto nll_of = [&](const DesignVector& d) {
        Rng rng(derive_seed(seed, 0x10000ULL + static_cast<uint64_t>(d.design_id)));
        return feasibility_nll(params, d, n_samples, rng);
    };
    for (const auto& d : heldin) res.heldin_nlls.push_back(nll_of(d));
    for (const auto& d : heldout) res.heldout_nlls.push_back(nll_of(d));
    res.heldin_mean = mean_of(res.heldin_nlls);
    res.heldout_mean = mean_of(res.heldout_nlls);
    return res;
}

GapEvalResult gap_eval(const ModelParams& params, const SampleResult& sample,
                       std::span<const DesignVector> induced_gaps) {
    if (induced_gaps.empty()) throw std::invalid_argument("gap_eval needs induced gap designs");
    const int k = params.config.latent_dim;
    Tensor gap_latents({static_cast<long>(induced_gaps.size()), static_cast<long>(k)});
    for (size_t i = 0; i < induced_gaps.size(); ++i) {
        const auto enc = encode_design(params, induced_gaps[i]);
        for (int j = 0; j < k; ++j) gap_latents.at(static_cast<long>(i), j) = enc.mu[static_cast<size_t>(j)];
    }

    GapEvalResult res;
    double acc_sum = 0.0, rand_sum = 0.0;
    for (size_t i = 0; i < sample.candidates.size(); ++i) {
        const auto& c = sample.candidates[i];
        if (c.status == GapCandidate::Status::RejectedFeasibility) continue;
        const double msqe = latent_msqe(c.latent, gap_latents);
        rand_sum += msqe;
        ++res.n_random;
        if (c.status == GapCandidate::Status::Accepted) {
            acc_sum += msqe;
            ++res.n_accepted;
        }
    }
    res.msqe_accepted = res.n_accepted > 0 ? acc_sum / static_cast<double>(res.n_accepted) : 0.0;
    res.msqe_random = res.n_random > 0 ? rand_sum / static_cast<double>(res.n_random) : 0.0;
    return res;
}

Histogram rho2_histogram(std::span<const double> induced, std::span<const double> sampled, int bins) {
    if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
    Histogram h;
    for (int i = 0; i <= bins; ++i) h.edges.push_back(static_cast<double>(i) / bins);
    h.induced_mass.assign(static_cast<size_t>(bins), 0.0);
    h.sampled_mass.assign(static_cast<size_t>(bins), 0.0);

    auto fill = [&](std::span<const double> values, std::vector<double>& mass) {
        if (values.empty()) return;
        for (double v : values) {
            double x = std::clamp(v, 0.0, 1.0);
            int bin = std::min(bins - 1, static_cast<int>(x * bins));
            mass[static_cast<size_t>(bin)] += 1.0;
        }
        for (auto& m : mass) m /= static_cast<double>(values.size());
    };
    fill(induced, h.induced_mass);
    fill(sampled, h.sampled_mass);
    return h;
}

std::string Histogram::to_tsv() const {
    std::ostringstream out;
    out << "bin_lo\tbin_hi\tinduced\tsampled\n";
    char buf[128];
    for (size_t i = 0; i + 1 < edges.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g\t%.17g\t%.17g\t%.17g\n", edges[i], edges[i + 1],
                      induced_mass[i], sampled_mass[i]);
        out << buf;
    }
    return out.str();
}

void EvalReport::add(const std::string& name, double value) {
    if (!std::isfinite(value)) throw std::invalid_argument("non-finite metric " + name);
    auto it = values_.find(name);
    if (it == values_.end()) {
        order_.push_back(name);
        values_[name] = {value};
    } else {
        it->second.push_back(value);
    }
}

double EvalReport::mean(const std::string& name) const { return mean_of(seed_values(name)); }

double EvalReport::stddev(const std::string& name) const { return sample_stddev(seed_values(name)); }

const std::vector<double>& EvalReport::seed_values(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::invalid_argument("unknown metric " + name);
    return it->second;
}

std::string EvalReport::to_tsv() const {
    std::ostringstream out;
    out << "# stage=" << stage << "\n";
    char hbuf[48];
    std::snprintf(hbuf, sizeof(hbuf), "%016llx", static_cast<unsigned long long>(config_hash));
    out << "# config_hash=" << hbuf << "\n";
    if (flagged) out << "# flag=" << flag_reason << "\n";
    out << "metric\tmean\tstddev\tseeds\n";
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const auto& name : order_) {
        const auto& vals = seed_values(name);
        out << name << '\t' << fmt(mean(name)) << '\t'
            << (vals.size() >= 2 ? fmt(stddev(name)) : std::string("-")) << '\t';
        for (size_t i = 0; i < vals.size(); ++i) out << (i ? "," : "") << fmt(vals[i]);
        out << '\n';
    }
    return out.str();
}

}  // namespace gapfind
