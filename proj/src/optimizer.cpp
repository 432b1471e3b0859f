#include "gapfind/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace gapfind {

void Optimizer::step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
                     const std::function<double(const std::string&)>& lr_override,
                     const std::function<bool(const std::string&)>& frozen) {
    ++t_;
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        if (!g.same_shape(p)) throw std::invalid_argument("gradient shape mismatch for " + name);
        const bool skip = frozen && frozen(name);
        const double lr = lr_override ? lr_override(name) : cfg_.lr;

        if (cfg_.kind == OptimizerKind::Sgd) {
            if (skip) continue;
            for (long i = 0; i < p.numel(); ++i) p[i] -= lr * g[i];
            continue;
        }

        // Adam moments keep tracking gradients for frozen groups; only the
        // parameter write is skipped.
        auto& mom = moments_[name];
        if (mom.m.numel() != p.numel()) {
            mom.m = Tensor(p.shape());
            mom.v = Tensor(p.shape());
        }
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (long i = 0; i < p.numel(); ++i) {
            mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g[i];
            mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            if (skip) continue;
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace gapfind
