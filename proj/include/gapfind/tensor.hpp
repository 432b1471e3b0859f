#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gapfind {

// Dense row-major float64 tensor. Graph ops treat everything as 2-D
// (scalars are (1,1), vectors are (1,n) rows).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<long> shape);

    static Tensor zeros(std::vector<long> shape);
    static Tensor full(std::vector<long> shape, double value);
    static Tensor scalar(double value);
    static Tensor row(std::vector<double> values);
    static Tensor from(std::vector<long> shape, std::vector<double> values);

    const std::vector<long>& shape() const { return shape_; }
    long numel() const { return static_cast<long>(data_.size()); }
    bool empty() const { return data_.empty(); }

    long rows() const;
    long cols() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](long i) { return data_[static_cast<size_t>(i)]; }
    double operator[](long i) const { return data_[static_cast<size_t>(i)]; }
    double& at(long r, long c);
    double at(long r, long c) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    void fill(double value);

    std::string shape_str() const;

private:
    std::vector<long> shape_;
    std::vector<double> data_;
};

// C = A * B for 2-D tensors, plain triple loop.
Tensor matmul(const Tensor& a, const Tensor& b);
// C = A * B^T.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

}  // namespace gapfind
