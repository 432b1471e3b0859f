#pragma once

#include <functional>
#include <map>
#include <string>

#include "gapfind/tensor.hpp"

namespace gapfind {

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First-order updates over a named parameter map. Adam keeps bias-corrected
// per-parameter moments; SGD is params -= lr * grad. A per-name learning-rate
// override and a freeze predicate support per-group rates and freezing.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

    void step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
              const std::function<double(const std::string&)>& lr_override = {},
              const std::function<bool(const std::string&)>& frozen = {});

    long step_count() const { return t_; }
    const OptimizerConfig& config() const { return cfg_; }

private:
    struct Moments {
        Tensor m, v;
    };
    OptimizerConfig cfg_;
    std::map<std::string, Moments> moments_;
    long t_ = 0;
};

}  // namespace gapfind
