#include "gapfind/graph.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "gapfind/mathutil.hpp"

namespace gapfind {

namespace {
void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}
}  // namespace

NodeId Graph::emit(Node node) {
    compute(node);
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::input(Tensor value) {
    Node n;
    n.op = OpKind::Input;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::param(Tensor value, std::string name) {
    Node n;
    n.op = OpKind::Param;
    n.value = std::move(value);
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    NodeId id = static_cast<NodeId>(nodes_.size() - 1);
    params_.push_back(id);
    return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    Node n;
    n.op = OpKind::MatMul;
    n.parents = {a, b};
    return emit(std::move(n));
}

NodeId Graph::matmul_nt(NodeId a, NodeId b) {
    Node n;
    n.op = OpKind::MatMulNT;
    n.parents = {a, b};
    return emit(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    require(value(a).same_shape(value(b)), "add shape mismatch");
    Node n;
    n.op = OpKind::Add;
    n.parents = {a, b};
    return emit(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    require(value(a).same_shape(value(b)), "mul shape mismatch");
    Node n;
    n.op = OpKind::Mul;
    n.parents = {a, b};
    return emit(std::move(n));
}

NodeId Graph::scale(NodeId a, double c) {
    Node n;
    n.op = OpKind::Scale;
    n.parents = {a};
    n.attr = c;
    return emit(std::move(n));
}

NodeId Graph::tanh_op(NodeId a) {
    Node n;
    n.op = OpKind::Tanh;
    n.parents = {a};
    return emit(std::move(n));
}

NodeId Graph::relu(NodeId a) {
    Node n;
    n.op = OpKind::Relu;
    n.parents = {a};
    return emit(std::move(n));
}

NodeId Graph::sigmoid_op(NodeId a) {
    Node n;
    n.op = OpKind::Sigmoid;
    n.parents = {a};
    return emit(std::move(n));
}

NodeId Graph::softplus_op(NodeId a) {
    Node n;
    n.op = OpKind::Softplus;
    n.parents = {a};
    return emit(std::move(n));
}

NodeId Graph::softplus_floor(NodeId a, double floor) {
    require(floor >= 0.0, "softplus_floor: negative floor");
    Node n;
    n.op = OpKind::SoftplusFloor;
    n.parents = {a};
    n.attr = floor;
    return emit(std::move(n));
}

NodeId Graph::exp_op(NodeId a) {
    Node n;
    n.op = OpKind::Exp;
    n.parents = {a};
    return emit(std::move(n));
}

NodeId Graph::log_op(NodeId a) {
    Node n;
    n.op = OpKind::Log;
    n.parents = {a};
    return emit(std::move(n));
}

NodeId Graph::reduce_sum(NodeId a) {
    Node n;
    n.op = OpKind::ReduceSum;
    n.parents = {a};
    return emit(std::move(n));
}

NodeId Graph::slice_cols(NodeId a, long begin, long len) {
    const Tensor& v = value(a);
    require(v.rows() == 1, "slice_cols expects a (1,n) row");
    require(begin >= 0 && len >= 1 && begin + len <= v.cols(), "slice_cols out of range");
    Node n;
    n.op = OpKind::SliceCols;
    n.parents = {a};
    n.begin = begin;
    n.len = len;
    return emit(std::move(n));
}

NodeId Graph::row_stack(const std::vector<NodeId>& rows) {
    require(!rows.empty(), "row_stack of nothing");
    const long k = value(rows.front()).cols();
    for (NodeId r : rows) require(value(r).rows() == 1 && value(r).cols() == k, "row_stack shape mismatch");
    Node n;
    n.op = OpKind::RowStack;
    n.parents = rows;
    return emit(std::move(n));
}

NodeId Graph::softmax_xent(NodeId logits, long target) {
    const Tensor& v = value(logits);
    require(v.rows() == 1, "softmax_xent expects a (1,n) row of logits");
    require(target >= 0 && target < v.cols(), "softmax_xent target out of range");
    Node n;
    n.op = OpKind::SoftmaxXent;
    n.parents = {logits};
    n.target = target;
    return emit(std::move(n));
}

NodeId Graph::bernoulli_nll(NodeId logits, Tensor observed) {
    require(value(logits).same_shape(observed), "bernoulli_nll shape mismatch");
    Node n;
    n.op = OpKind::BernoulliNll;
    n.parents = {logits};
    n.observed = std::move(observed);
    return emit(std::move(n));
}

NodeId Graph::gaussian_nll(NodeId mean, NodeId raw_scale, Tensor observed, double sigma_floor) {
    require(value(mean).same_shape(observed), "gaussian_nll mean/observed shape mismatch");
    require(value(raw_scale).same_shape(observed), "gaussian_nll scale/observed shape mismatch");
    require(sigma_floor > 0.0, "gaussian_nll needs a positive sigma floor");
    Node n;
    n.op = OpKind::GaussianNll;
    n.parents = {mean, raw_scale};
    n.observed = std::move(observed);
    n.attr = sigma_floor;
    return emit(std::move(n));
}

NodeId Graph::kl_std_normal(NodeId mu, NodeId sigma) {
    require(value(mu).same_shape(value(sigma)), "kl_std_normal shape mismatch");
    Node n;
    n.op = OpKind::KlStdNormal;
    n.parents = {mu, sigma};
    return emit(std::move(n));
}

NodeId Graph::add_n(const std::vector<NodeId>& terms, const std::vector<double>& coeffs) {
    require(!terms.empty() && terms.size() == coeffs.size(), "add_n terms/coeffs mismatch");
    for (NodeId t : terms) require(value(t).numel() == 1, "add_n expects scalar terms");
    Node n;
    n.op = OpKind::AddN;
    n.parents = terms;
    n.coeffs = coeffs;
    return emit(std::move(n));
}

double Graph::value_scalar(NodeId id) const {
    const Tensor& v = value(id);
    if (v.numel() != 1) throw std::logic_error("value_scalar on non-scalar node");
    return v[0];
}

void Graph::compute(Node& n) {
    auto& P = nodes_;
    auto val = [&](size_t i) -> const Tensor& { return P[static_cast<size_t>(n.parents[i])].value; };
    switch (n.op) {
        case OpKind::Input:
        case OpKind::Param:
            break;
        case OpKind::MatMul:
            n.value = gapfind::matmul(val(0), val(1));
            break;
        case OpKind::MatMulNT:
            n.value = gapfind::matmul_nt(val(0), val(1));
            break;
        case OpKind::Add: {
            n.value = val(0);
            const Tensor& b = val(1);
            for (long i = 0; i < n.value.numel(); ++i) n.value[i] += b[i];
            break;
        }
        case OpKind::Mul: {
            n.value = val(0);
            const Tensor& b = val(1);
            for (long i = 0; i < n.value.numel(); ++i) n.value[i] *= b[i];
            break;
        }
        case OpKind::Scale: {
            n.value = val(0);
            for (long i = 0; i < n.value.numel(); ++i) n.value[i] *= n.attr;
            break;
        }
        case OpKind::Tanh: {
            n.value = val(0);
            for (long i = 0; i < n.value.numel(); ++i) n.value[i] = std::tanh(n.value[i]);
            break;
        }
        case OpKind::Relu: {
            n.value = val(0);
            for (long i = 0; i < n.value.numel(); ++i) n.value[i] = n.value[i] > 0.0 ? n.value[i] : 0.0;
            break;
        }
        case OpKind::Sigmoid: {
            n.value = val(0);
            for (long i = 0; i < n.value.numel(); ++i) n.value[i] = sigmoid(n.value[i]);
            break;
        }
        case OpKind::Softplus: {
            n.value = val(0);
            for (long i = 0; i < n.value.numel(); ++i) n.value[i] = softplus(n.value[i]);
            break;
        }
        case OpKind::SoftplusFloor: {
            n.value = val(0);
            for (long i = 0; i < n.value.numel(); ++i) {
                const double s = softplus(n.value[i]);
                n.value[i] = s > n.attr ? s : n.attr;
            }
            break;
        }
        case OpKind::Exp: {
            n.value = val(0);
            for (long i = 0; i < n.value.numel(); ++i) n.value[i] = std::exp(n.value[i]);
            break;
        }
        case OpKind::Log: {
            n.value = val(0);
            for (long i = 0; i < n.value.numel(); ++i) {
                if (n.value[i] == 0.0) log_of_zero_ = true;
                n.value[i] = std::log(n.value[i]);
            }
            break;
        }
        case OpKind::ReduceSum: {
            double s = 0.0;
            for (long i = 0; i < val(0).numel(); ++i) s += val(0)[i];
            n.value = Tensor::scalar(s);
            break;
        }
        case OpKind::SliceCols: {
            const Tensor& a = val(0);
            Tensor out({1, n.len});
            for (long i = 0; i < n.len; ++i) out[i] = a[n.begin + i];
            n.value = std::move(out);
            break;
        }
        case OpKind::RowStack: {
            const long k = val(0).cols();
            Tensor out({static_cast<long>(n.parents.size()), k});
            for (size_t r = 0; r < n.parents.size(); ++r)
                for (long j = 0; j < k; ++j)
                    out.at(static_cast<long>(r), j) = nodes_[static_cast<size_t>(n.parents[r])].value[j];
            n.value = std::move(out);
            break;
        }
        case OpKind::SoftmaxXent: {
            const Tensor& l = val(0);
            double m = l[0];
            for (long i = 1; i < l.numel(); ++i) m = std::max(m, l[i]);
            double z = 0.0;
            Tensor probs = l;
            for (long i = 0; i < l.numel(); ++i) {
                probs[i] = std::exp(l[i] - m);
                z += probs[i];
            }
            for (long i = 0; i < l.numel(); ++i) probs[i] /= z;
            n.value = Tensor::scalar(std::log(z) + m - l[n.target]);
            n.aux = std::move(probs);
            break;
        }
        case OpKind::BernoulliNll: {
            const Tensor& l = val(0);
            double s = 0.0;
            for (long i = 0; i < l.numel(); ++i) s += softplus(l[i]) - n.observed[i] * l[i];
            n.value = Tensor::scalar(s);
            break;
        }
        case OpKind::GaussianNll: {
            const Tensor& mean = val(0);
            const Tensor& raw = val(1);
            Tensor sig = raw;
            double s = 0.0;
            for (long i = 0; i < raw.numel(); ++i) {
                const double sp = softplus(raw[i]);
                sig[i] = sp > n.attr ? sp : n.attr;
                const double z = (n.observed[i] - mean[i]) / sig[i];
                s += 0.5 * z * z + std::log(sig[i]) + 0.91893853320467274178;
            }
            n.value = Tensor::scalar(s);
            n.aux = std::move(sig);
            break;
        }
        case OpKind::KlStdNormal: {
            const Tensor& mu = val(0);
            const Tensor& sig = val(1);
            double s = 0.0;
            for (long i = 0; i < mu.numel(); ++i)
                s += 0.5 * (sig[i] * sig[i] + mu[i] * mu[i] - 1.0) - std::log(sig[i]);
            n.value = Tensor::scalar(s);
            break;
        }
        case OpKind::AddN: {
            double s = 0.0;
            for (size_t i = 0; i < n.parents.size(); ++i)
                s += n.coeffs[i] * nodes_[static_cast<size_t>(n.parents[i])].value[0];
            n.value = Tensor::scalar(s);
            break;
        }
    }
}

double Graph::forward(NodeId loss) {
    log_of_zero_ = false;
    for (auto& n : nodes_) compute(n);
    return value_scalar(loss);
}

void Graph::backward(NodeId loss) {
    if (value(loss).numel() != 1) throw std::logic_error("backward from non-scalar loss");
    for (auto& n : nodes_) {
        n.grad = Tensor(n.value.shape());
    }
    nodes_[static_cast<size_t>(loss)].grad[0] = 1.0;
    for (size_t i = nodes_.size(); i-- > 0;) {
        accumulate_parent_grads(nodes_[i]);
    }
}

void Graph::accumulate_parent_grads(Node& n) {
    if (n.parents.empty()) return;
    auto pval = [&](size_t i) -> const Tensor& { return nodes_[static_cast<size_t>(n.parents[i])].value; };
    auto pgrad = [&](size_t i) -> Tensor& { return nodes_[static_cast<size_t>(n.parents[i])].grad; };
    const Tensor& g = n.grad;
    switch (n.op) {
        case OpKind::Input:
        case OpKind::Param:
            break;
        case OpKind::MatMul: {
            // dA += g * B^T ; dB += A^T * g
            const Tensor& a = pval(0);
            const Tensor& b = pval(1);
            Tensor& da = pgrad(0);
            Tensor& db = pgrad(1);
            const long m = a.rows(), k = a.cols(), ncols = b.cols();
            for (long i = 0; i < m; ++i)
                for (long p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (long j = 0; j < ncols; ++j) s += g.at(i, j) * b.at(p, j);
                    da.at(i, p) += s;
                }
            for (long p = 0; p < k; ++p)
                for (long j = 0; j < ncols; ++j) {
                    double s = 0.0;
                    for (long i = 0; i < m; ++i) s += a.at(i, p) * g.at(i, j);
                    db.at(p, j) += s;
                }
            break;
        }
        case OpKind::MatMulNT: {
            // C = A * B^T: dA += g * B ; dB += g^T * A
            const Tensor& a = pval(0);
            const Tensor& b = pval(1);
            Tensor& da = pgrad(0);
            Tensor& db = pgrad(1);
            const long m = a.rows(), k = a.cols(), nrows = b.rows();
            for (long i = 0; i < m; ++i)
                for (long p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (long j = 0; j < nrows; ++j) s += g.at(i, j) * b.at(j, p);
                    da.at(i, p) += s;
                }
            for (long j = 0; j < nrows; ++j)
                for (long p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (long i = 0; i < m; ++i) s += g.at(i, j) * a.at(i, p);
                    db.at(j, p) += s;
                }
            break;
        }
        case OpKind::Add:
            for (long i = 0; i < g.numel(); ++i) {
                pgrad(0)[i] += g[i];
                pgrad(1)[i] += g[i];
            }
            break;
        case OpKind::Mul:
            for (long i = 0; i < g.numel(); ++i) {
                pgrad(0)[i] += g[i] * pval(1)[i];
                pgrad(1)[i] += g[i] * pval(0)[i];
            }
            break;
        case OpKind::Scale:
            for (long i = 0; i < g.numel(); ++i) pgrad(0)[i] += g[i] * n.attr;
            break;
        case OpKind::Tanh:
            for (long i = 0; i < g.numel(); ++i) pgrad(0)[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
            break;
        case OpKind::Relu:
            for (long i = 0; i < g.numel(); ++i) pgrad(0)[i] += pval(0)[i] > 0.0 ? g[i] : 0.0;
            break;
        case OpKind::Sigmoid:
            for (long i = 0; i < g.numel(); ++i) pgrad(0)[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
            break;
        case OpKind::Softplus:
            for (long i = 0; i < g.numel(); ++i) pgrad(0)[i] += g[i] * sigmoid(pval(0)[i]);
            break;
        case OpKind::SoftplusFloor:
            for (long i = 0; i < g.numel(); ++i)
                if (n.value[i] > n.attr) pgrad(0)[i] += g[i] * sigmoid(pval(0)[i]);
            break;
        case OpKind::Exp:
            for (long i = 0; i < g.numel(); ++i) pgrad(0)[i] += g[i] * n.value[i];
            break;
        case OpKind::Log:
            for (long i = 0; i < g.numel(); ++i) pgrad(0)[i] += g[i] / pval(0)[i];
            break;
        case OpKind::ReduceSum:
            for (long i = 0; i < pval(0).numel(); ++i) pgrad(0)[i] += g[0];
            break;
        case OpKind::SliceCols:
            for (long i = 0; i < n.len; ++i) pgrad(0)[n.begin + i] += g[i];
            break;
        case OpKind::RowStack: {
            const long k = n.value.cols();
            for (size_t r = 0; r < n.parents.size(); ++r)
                for (long j = 0; j < k; ++j) pgrad(r)[j] += g.at(static_cast<long>(r), j);
            break;
        }
        case OpKind::SoftmaxXent: {
            for (long i = 0; i < n.aux.numel(); ++i)
                pgrad(0)[i] += g[0] * (n.aux[i] - (i == n.target ? 1.0 : 0.0));
            break;
        }
        case OpKind::BernoulliNll:
            for (long i = 0; i < pval(0).numel(); ++i)
                pgrad(0)[i] += g[0] * (sigmoid(pval(0)[i]) - n.observed[i]);
            break;
        case OpKind::GaussianNll: {
            const Tensor& mean = pval(0);
            const Tensor& raw = pval(1);
            const Tensor& sig = n.aux;
            for (long i = 0; i < mean.numel(); ++i) {
                const double diff = mean[i] - n.observed[i];
                pgrad(0)[i] += g[0] * diff / (sig[i] * sig[i]);
                if (sig[i] > n.attr) {
                    const double dsig = 1.0 / sig[i] - diff * diff / (sig[i] * sig[i] * sig[i]);
                    pgrad(1)[i] += g[0] * dsig * sigmoid(raw[i]);
                }
            }
            break;
        }
        case OpKind::KlStdNormal: {
            const Tensor& mu = pval(0);
            const Tensor& sig = pval(1);
            for (long i = 0; i < mu.numel(); ++i) {
                pgrad(0)[i] += g[0] * mu[i];
                pgrad(1)[i] += g[0] * (sig[i] - 1.0 / sig[i]);
            }
            break;
        }
        case OpKind::AddN:
            for (size_t i = 0; i < n.parents.size(); ++i) pgrad(i)[0] += g[0] * n.coeffs[i];
            break;
    }
}

double gradient_rel_err(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-4});
    return std::fabs(analytic - numeric) / denom;
}

GradCheckReport grad_check(Graph& g, NodeId loss, double h, double tol) {
    GradCheckReport report;
    report.tolerance = tol;
    g.forward(loss);
    g.backward(loss);

    // Snapshot analytic gradients before the finite-difference sweeps below
    // overwrite the tape.
    std::vector<Tensor> analytic;
    for (NodeId p : g.param_nodes()) analytic.push_back(g.grad(p));

    for (size_t pi = 0; pi < g.param_nodes().size(); ++pi) {
        const NodeId p = g.param_nodes()[pi];
        GradCheckEntry entry;
        entry.name = g.name(p).empty() ? "param" + std::to_string(pi) : g.name(p);
        Tensor& v = g.mutable_value(p);
        for (long i = 0; i < v.numel(); ++i) {
            const double orig = v[i];
            v[i] = orig + h;
            const double up = g.forward(loss);
            v[i] = orig - h;
            const double down = g.forward(loss);
            v[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double err = gradient_rel_err(analytic[pi][i], numeric);
            if (err > entry.max_rel_err) {
                entry.max_rel_err = err;
                entry.worst_index = i;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    g.forward(loss);
    report.pass = report.max_rel_err <= tol;
    return report;
}

std::string GradCheckReport::summary() const {
    char buf[160];
    std::string out;
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof(buf), "%-24s max_rel_err=%.3e %s\n", e.name.c_str(), e.max_rel_err,
                      e.max_rel_err <= tolerance ? "ok" : "FAIL");
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "overall max_rel_err=%.3e tol=%.1e -> %s\n", max_rel_err, tolerance,
                  pass ? "PASS" : "FAIL");
    out += buf;
    return out;
}

}  // namespace gapfind
