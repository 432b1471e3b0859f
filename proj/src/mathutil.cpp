#include "gapfind/mathutil.hpp"

#include <algorithm>
#include <stdexcept>

namespace gapfind {

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile of empty set");
    if (q < 0.0 || q > 100.0) throw std::invalid_argument("percentile q out of [0,100]");
    std::sort(values.begin(), values.end());
    const double idx = q / 100.0 * static_cast<double>(values.size() - 1);
    const size_t lo = static_cast<size_t>(idx);
    const double frac = idx - static_cast<double>(lo);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

double mean_of(std::span<const double> values) {
    if (values.empty()) return 0.0;
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
}

double sample_stddev(std::span<const double> values) {
    if (values.size() < 2) return 0.0;
    const double m = mean_of(values);
    double s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(values.size() - 1));
}

}  // namespace gapfind
