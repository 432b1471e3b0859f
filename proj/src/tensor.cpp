#include "gapfind/tensor.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gapfind {

namespace {
long shape_numel(const std::vector<long>& shape) {
    long n = 1;
    for (long d : shape) {
        if (d < 0) throw std::invalid_argument("tensor shape has negative dim");
        n *= d;
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<long> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor Tensor::zeros(std::vector<long> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<long> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::scalar(double value) {
    Tensor t({1, 1});
    t[0] = value;
    return t;
}

Tensor Tensor::row(std::vector<double> values) {
    Tensor t;
    t.shape_ = {1, static_cast<long>(values.size())};
    t.data_ = std::move(values);
    return t;
}

Tensor Tensor::from(std::vector<long> shape, std::vector<double> values) {
    if (shape_numel(shape) != static_cast<long>(values.size()))
        throw std::invalid_argument("tensor data length does not match shape");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
}

long Tensor::rows() const {
    if (shape_.size() != 2) throw std::logic_error("expected 2-D tensor, got " + shape_str());
    return shape_[0];
}

long Tensor::cols() const {
    if (shape_.size() != 2) throw std::logic_error("expected 2-D tensor, got " + shape_str());
    return shape_[1];
}

double& Tensor::at(long r, long c) { return data_[static_cast<size_t>(r * cols() + c)]; }
double Tensor::at(long r, long c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::fill(double value) { data_.assign(data_.size(), value); }

std::string Tensor::shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape_[i]);
    }
    return s + ")";
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const long m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw std::invalid_argument("matmul shape mismatch " + a.shape_str() + " x " + b.shape_str());
    Tensor c({m, n});
    for (long i = 0; i < m; ++i) {
        for (long p = 0; p < k; ++p) {
            const double aip = a.at(i, p);
            if (aip == 0.0) continue;
            for (long j = 0; j < n; ++j) c.at(i, j) += aip * b.at(p, j);
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    const long m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k)
        throw std::invalid_argument("matmul_nt shape mismatch " + a.shape_str() + " x " + b.shape_str() + "^T");
    Tensor c({m, n});
    for (long i = 0; i < m; ++i)
        for (long j = 0; j < n; ++j) {
            double s = 0.0;
            for (long p = 0; p < k; ++p) s += a.at(i, p) * b.at(j, p);
            c.at(i, j) = s;
        }
    return c;
}

}  // namespace gapfind
