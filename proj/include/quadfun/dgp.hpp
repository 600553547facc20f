#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "quadfun/basis.hpp"
#include "quadfun/errors.hpp"
#include "quadfun/quadrature.hpp"
#include "quadfun/rng.hpp"

namespace quadfun {

inline constexpr std::size_t kVerificationGridSize = 4097;
inline constexpr std::size_t kCdfTableSize = 4097;
inline constexpr double kDefaultPositivityMargin = 0.1;
inline constexpr double kDefaultClip = 0.05;

/// Evaluates sum_j c_j phi_j(x) over the cosine basis.
inline double cosine_series(std::span<const double> coefficients, double x) {
    double total = coefficients.empty() ? 0.0 : coefficients[0];
    for (std::size_t j = 1; j < coefficients.size(); ++j) {
        total += coefficients[j] * std::numbers::sqrt2 *
                 std::cos(static_cast<double>(j) * std::numbers::pi * x);
    }
    return total;
}

/// Density p = sum_j theta_j phi_j on [0,1] over the cosine basis, theta_1 = 1.
///
/// Sampling inverts a CDF table built at construction on kCdfTableSize nodes.
class SeriesDensity {
public:
    explicit SeriesDensity(std::vector<double> coefficients,
                           double p_min = kDefaultPositivityMargin)
        : theta_(std::move(coefficients)), p_min_(p_min) {
        if (theta_.empty() || theta_[0] != 1.0) {
            throw DomainError("series density needs theta_1 = 1");
        }
        if (!(p_min_ > 0.0)) {
            throw DomainError("positivity margin must be positive");
        }
        const double step = 1.0 / static_cast<double>(kVerificationGridSize - 1);
        for (std::size_t i = 0; i < kVerificationGridSize; ++i) {
            const double x = step * static_cast<double>(i);
            if ((*this)(x) < p_min_) {
                throw DomainError("density drops below p_min = " + std::to_string(p_min_) +
                                  " at x = " + std::to_string(x));
            }
        }
        cdf_table_.resize(kCdfTableSize);
        const double h = 1.0 / static_cast<double>(kCdfTableSize - 1);
        for (std::size_t i = 0; i < kCdfTableSize; ++i) {
            cdf_table_[i] = cdf(h * static_cast<double>(i));
        }
        cdf_table_.front() = 0.0;
        cdf_table_.back() = 1.0;
    }

    std::span<const double> coefficients() const noexcept { return theta_; }
    std::size_t size() const noexcept { return theta_.size(); }
    double p_min() const noexcept { return p_min_; }

    double operator()(double x) const { return cosine_series(theta_, x); }

    /// Closed-form antiderivative of the series.
    double cdf(double x) const {
        double total = x;
        for (std::size_t j = 1; j < theta_.size(); ++j) {
            const double w = static_cast<double>(j) * std::numbers::pi;
            total += theta_[j] * std::numbers::sqrt2 * std::sin(w * x) / w;
        }
        return total;
    }

    /// Inverse CDF: bisection over the table, then linear interpolation in the cell.
    double inverse_cdf(double u) const {
        const auto it = std::upper_bound(cdf_table_.begin(), cdf_table_.end(), u);
        std::size_t hi = static_cast<std::size_t>(it - cdf_table_.begin());
        hi = std::clamp<std::size_t>(hi, 1, kCdfTableSize - 1);
        const std::size_t lo = hi - 1;
        const double h = 1.0 / static_cast<double>(kCdfTableSize - 1);
        const double span = cdf_table_[hi] - cdf_table_[lo];
        const double t = span > 0.0 ? (u - cdf_table_[lo]) / span : 0.0;
        return std::clamp(h * (static_cast<double>(lo) + std::clamp(t, 0.0, 1.0)), 0.0, 1.0);
    }

    const std::vector<double>& cdf_table() const noexcept { return cdf_table_; }

private:
    std::vector<double> theta_;
    double p_min_;
    std::vector<double> cdf_table_;
};

/// psi = integral of p^2 = sum_j theta_j^2 (Parseval).
inline double true_expected_density(const SeriesDensity& density) {
    double total = 0.0;
    for (double t : density.coefficients()) {
        total += t * t;
    }
    return total;
}

inline std::vector<double> sample_density(const SeriesDensity& density, std::size_t n,
                                          Engine& rng) {
    std::vector<double> x(n);
    for (auto& xi : x) {
        xi = density.inverse_cdf(uniform01(rng));
    }
    return x;
}

/// pi(x) = clamp(sum_j c_j phi_j(x), eps, 1 - eps) over the cosine basis.
class PropensityModel {
public:
    explicit PropensityModel(std::vector<double> raw_coefficients, double clip = kDefaultClip)
        : coefficients_(std::move(raw_coefficients)), clip_(clip) {
        if (coefficients_.empty()) {
            throw DomainError("propensity model needs at least one coefficient");
        }
        if (!(clip_ > 0.0 && clip_ < 0.5)) {
            throw DomainError("clip must lie in (0, 1/2)");
        }
    }

    std::span<const double> coefficients() const noexcept { return coefficients_; }
    double clip() const noexcept { return clip_; }

    double raw(double x) const { return cosine_series(coefficients_, x); }
    double operator()(double x) const { return std::clamp(raw(x), clip_, 1.0 - clip_); }

    /// True when the clamp changes the series somewhere on the verification grid.
    bool clipping_binds() const {
        const double step = 1.0 / static_cast<double>(kVerificationGridSize - 1);
        for (std::size_t i = 0; i < kVerificationGridSize; ++i) {
            const double r = raw(step * static_cast<double>(i));
            if (r < clip_ || r > 1.0 - clip_) {
                return true;
            }
        }
        return false;
    }

private:
    std::vector<double> coefficients_;
    double clip_;
};

enum class DesignKind { iid_uniform, fixed_grid };

inline std::string to_string(DesignKind kind) {
    return kind == DesignKind::iid_uniform ? "iid_uniform" : "fixed_grid";
}

struct Design {
    DesignKind kind = DesignKind::iid_uniform;
    std::size_t n = 0;
};

/// X_i = (i - 1/2) / n for i = 1..n.
inline std::vector<double> grid_points(std::size_t n) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    }
    return x;
}

/// Covariates paired with a binary response stored as 0.0 / 1.0.
struct ConditionalData {
    std::vector<double> x;
    std::vector<double> a;
};

inline ConditionalData sample_conditional(const Design& design, const PropensityModel& propensity,
                                          Engine& rng) {
    ConditionalData data;
    if (design.kind == DesignKind::fixed_grid) {
        data.x = grid_points(design.n);
    } else {
        data.x.resize(design.n);
        for (auto& xi : data.x) {
            xi = uniform01(rng);
        }
    }
    data.a.resize(design.n);
    for (std::size_t i = 0; i < design.n; ++i) {
        data.a[i] = uniform01(rng) < propensity(data.x[i]) ? 1.0 : 0.0;
    }
    return data;
}

/// Population estimand integral pi(1 - pi) for iid_uniform; grid average of
/// pi(x_i)(1 - pi(x_i)) for fixed_grid.
inline double true_expected_cond_variance(const PropensityModel& propensity, const Design& design) {
    auto var = [&](double x) {
        const double p = propensity(x);
        return p * (1.0 - p);
    };
    if (design.kind == DesignKind::iid_uniform) {
        return simpson(var, 0.0, 1.0);
    }
    if (design.n == 0) {
        throw DomainError("fixed-grid estimand needs n >= 1");
    }
    double total = 0.0;
    for (double x : grid_points(design.n)) {
        total += var(x);
    }
    return total / static_cast<double>(design.n);
}

}  // namespace quadfun
