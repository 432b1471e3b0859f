#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "gapfind/tensor.hpp"

namespace gapfind {

using NodeId = int;

// Thrown when a loss or intermediate goes non-finite during training.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

enum class OpKind {
    Input,
    Param,
    MatMul,        // A(m,k) * B(k,n)
    MatMulNT,      // A(m,k) * B(n,k)^T
    Add,           // elementwise, same shape
    Mul,           // elementwise, same shape
    Scale,         // c * A
    Tanh,
    Relu,
    Sigmoid,
    Softplus,
    SoftplusFloor, // max(softplus(x), floor)
    Exp,
    Log,
    ReduceSum,     // scalar sum of all entries
    SliceCols,     // contiguous column range of a (1,n) row
    RowStack,      // stack (1,k) rows into (m,k)
    SoftmaxXent,   // -log softmax(logits)[target], logits (1,n)
    BernoulliNll,  // sum_i softplus(l_i) - x_i * l_i
    GaussianNll,   // sum_i -log N(x_i; mu_i, sigma_i^2), sigma = max(softplus(raw), floor)
    KlStdNormal,   // KL(N(mu, diag sigma^2) || N(0, I))
    AddN,          // weighted sum of scalar nodes
};

// Reverse-mode tape over dense float64 tensors. Nodes are evaluated eagerly
// as they are built; forward() re-evaluates the whole tape in insertion
// order (used by finite-difference checks after perturbing a parameter).
class Graph {
public:
    NodeId input(Tensor value);
    NodeId param(Tensor value, std::string name = "");

    NodeId matmul(NodeId a, NodeId b);
    NodeId matmul_nt(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double c);
    NodeId tanh_op(NodeId a);
    NodeId relu(NodeId a);
    NodeId sigmoid_op(NodeId a);
    NodeId softplus_op(NodeId a);
    NodeId softplus_floor(NodeId a, double floor);
    NodeId exp_op(NodeId a);
    NodeId log_op(NodeId a);
    NodeId reduce_sum(NodeId a);
    NodeId slice_cols(NodeId a, long begin, long len);
    NodeId row_stack(const std::vector<NodeId>& rows);
    NodeId softmax_xent(NodeId logits, long target);
    NodeId bernoulli_nll(NodeId logits, Tensor observed);
    NodeId gaussian_nll(NodeId mean, NodeId raw_scale, Tensor observed, double sigma_floor);
    NodeId kl_std_normal(NodeId mu, NodeId sigma);
    NodeId add_n(const std::vector<NodeId>& terms, const std::vector<double>& coeffs);

    const Tensor& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
    double value_scalar(NodeId id) const;
    Tensor& mutable_value(NodeId id) { return nodes_[static_cast<size_t>(id)].value; }

    // Re-evaluates every node from current leaf values; returns the scalar
    // value of the given node.
    double forward(NodeId loss);
    void backward(NodeId loss);

    const Tensor& grad(NodeId id) const { return nodes_[static_cast<size_t>(id)].grad; }
    const std::vector<NodeId>& param_nodes() const { return params_; }
    const std::string& name(NodeId id) const { return nodes_[static_cast<size_t>(id)].name; }
    size_t size() const { return nodes_.size(); }
    bool saw_log_of_zero() const { return log_of_zero_; }

private:
    struct Node {
        OpKind op;
        std::vector<NodeId> parents;
        Tensor value;
        Tensor grad;
        Tensor observed;             // NLL targets
        Tensor aux;                  // cached softmax probs / sigmas
        std::vector<double> coeffs;  // AddN weights
        double attr = 0.0;           // Scale factor / sigma floor
        long target = -1;            // SoftmaxXent class index
        long begin = 0, len = 0;     // SliceCols
        std::string name;
    };

    NodeId emit(Node node);
    void compute(Node& node);
    void accumulate_parent_grads(Node& node);

    std::vector<Node> nodes_;
    std::vector<NodeId> params_;
    bool log_of_zero_ = false;
};

// Per-parameter result of checking backward() against central finite
// differences on the graph's own forward().
struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    long worst_index = -1;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;

    std::string summary() const;
};

GradCheckReport grad_check(Graph& g, NodeId loss, double h = 1e-5, double tol = 1e-4);

// |a-b| / max(|a|, |b|, 1e-4): relative for healthy magnitudes, absolute
// near zero where finite differences are noise-dominated.
double gradient_rel_err(double analytic, double numeric);

}  // namespace gapfind
