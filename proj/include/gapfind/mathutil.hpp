#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace gapfind {

inline double log_sum_exp(std::span<const double> vals) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : vals)
        if (v > m) m = v;
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : vals) s += std::exp(v - m);
    return m + std::log(s);
}

inline std::vector<double> stable_softmax(std::span<const double> logits) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : logits)
        if (v > m) m = v;
    std::vector<double> p(logits.size());
    double s = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        s += p[i];
    }
    for (auto& v : p) v /= s;
    return p;
}

inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double normal_log_pdf(double x, double mean, double stddev) {
    const double z = (x - mean) / stddev;
    return -0.5 * z * z - std::log(stddev) - 0.91893853320467274178;  // 0.5*ln(2*pi)
}

// Linear-interpolation percentile (index q/100 * (n-1) into the sorted values).
double percentile(std::vector<double> values, double q);

double mean_of(std::span<const double> values);
// Sample standard deviation (n-1 denominator); 0 for fewer than 2 values.
double sample_stddev(std::span<const double> values);

}  // namespace gapfind
