#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "quadfun/errors.hpp"

namespace quadfun {

/// Neumaier-compensated sum.
inline double accurate_sum(std::span<const double> values) {
    double sum = 0.0;
    double carry = 0.0;
    for (double v : values) {
        const double t = sum + v;
        carry += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
        sum = t;
    }
    return sum + carry;
}

inline double mean(std::span<const double> values) {
    if (values.empty()) {
        throw DomainError("mean of an empty range");
    }
    return accurate_sum(values) / static_cast<double>(values.size());
}

/// Sample standard deviation with the n - 1 denominator. Two-pass for accuracy.
inline double sample_sd(std::span<const double> values) {
    if (values.size() < 2) {
        throw DomainError("sample SD needs at least 2 values, got " +
                          std::to_string(values.size()));
    }
    const double m = mean(values);
    std::vector<double> squares(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        squares[i] = (values[i] - m) * (values[i] - m);
    }
    return std::sqrt(accurate_sum(squares) / static_cast<double>(values.size() - 1));
}

/// Monte Carlo standard error of the average of `values`: SD / sqrt(count).
inline double mc_se(std::span<const double> values) {
    if (values.size() < 2) {
        throw DomainError("mc_se needs at least 2 values, got " + std::to_string(values.size()));
    }
    return sample_sd(values) / std::sqrt(static_cast<double>(values.size()));
}

inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw DomainError("normal quantile needs p in (0, 1)");
    }
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

}  // namespace quadfun
