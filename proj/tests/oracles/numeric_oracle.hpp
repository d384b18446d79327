#pragma once

// Scalar reference formulas evaluated the long way round.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

// C = sum_i (e^{-x_exp^2} - e^{-x_pred^2})^4, one term at a time.
inline double cost_reference(const double* expected, const double* predicted, std::size_t n = 11) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = std::exp(-(expected[i] * expected[i]));
        const double b = std::exp(-(predicted[i] * predicted[i]));
        const double d = a - b;
        total += d * d * d * d;
    }
    return total;
}

struct Line {
    double slope, intercept, r_squared;
};

// Normal equations [n sx; sx sxx] [b; a] = [sy; sxy] solved by Cramer's rule
// in long double; R^2 as the squared correlation coefficient.
inline Line ols_reference(const std::vector<double>& x, const std::vector<double>& y) {
    long double n = static_cast<long double>(x.size()), sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += static_cast<long double>(x[i]) * x[i];
        sxy += static_cast<long double>(x[i]) * y[i];
        syy += static_cast<long double>(y[i]) * y[i];
    }
    const long double det = n * sxx - sx * sx;
    const long double a = (n * sxy - sx * sy) / det;
    const long double b = (sy * sxx - sx * sxy) / det;
    const long double cov = n * sxy - sx * sy;
    const long double vx = n * sxx - sx * sx, vy = n * syy - sy * sy;
    return {static_cast<double>(a), static_cast<double>(b), static_cast<double>(cov * cov / (vx * vy))};
}

// Conv layers with 2x2x2 kernels plus dense layers, counted from a filter list.
inline std::size_t param_count_reference(const std::vector<int>& conv_filters, const std::vector<int>& dense_units,
                                         int flattened) {
    std::size_t total = 0;
    int in = 1;
    for (int f : conv_filters) {
        total += static_cast<std::size_t>(8 * in * f + f);
        in = f;
    }
    int prev = flattened;
    for (int u : dense_units) {
        total += static_cast<std::size_t>(prev) * u + u;
        prev = u;
    }
    return total;
}

}  // namespace oracle
