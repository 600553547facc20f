#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "quadfun/basis.hpp"
#include "quadfun/dgp.hpp"
#include "quadfun/errors.hpp"
#include "quadfun/pilots.hpp"
#include "quadfun/stats.hpp"

namespace quadfun {

enum class EstimatorKind { plugin, first_order, split };

inline std::string to_string(EstimatorKind kind) {
    switch (kind) {
        case EstimatorKind::plugin: return "plugin";
        case EstimatorKind::first_order: return "first_order";
        case EstimatorKind::split: return "split";
    }
    return "unknown";
}

/// Point estimate with its Wald standard error.
struct FunctionalEstimate {
    double value = 0.0;
    double se = 0.0;
    std::size_t n = 0;
    EstimatorKind estimator_kind = EstimatorKind::first_order;
};

namespace detail {

// Mean of the influence values, and the SD of scale * values over sqrt(n).
inline FunctionalEstimate from_influence(std::span<const double> values, double offset,
                                         double scale, EstimatorKind kind) {
    if (values.empty()) {
        throw DomainError("evaluation sample is empty");
    }
    FunctionalEstimate est;
    est.value = scale * mean(values) + offset;
    est.se = values.size() < 2
                 ? 0.0
                 : std::abs(scale) * sample_sd(values) / std::sqrt(static_cast<double>(values.size()));
    est.n = values.size();
    est.estimator_kind = kind;
    return est;
}

inline double dot_padded(std::span<const double> a, std::span<const double> b) {
    double total = 0.0;
    for (std::size_t j = 0; j < std::min(a.size(), b.size()); ++j) {
        total += a[j] * b[j];
    }
    return total;
}

}  // namespace detail

/// Plug-in value sum_j theta_hat_j^2 = integral p_hat^2. No correction, no se.
inline FunctionalEstimate plugin_expected_density(const PilotDensity& pilot) {
    const auto theta = pilot.coefficients();
    return {detail::dot_padded(theta, theta), 0.0, 0, EstimatorKind::plugin};
}

/// psi_hat = 2 P_n(p_hat) - integral p_hat^2; se = 2 SD(p_hat(X_i)) / sqrt(n).
inline FunctionalEstimate first_order_expected_density(const PilotDensity& pilot,
                                                       const CovariateSample& main) {
    require_independent(pilot.fold(), main.fold, "pilot and evaluation sample");
    std::vector<double> influence(main.x.size());
    std::transform(main.x.begin(), main.x.end(), influence.begin(),
                   [&](double x) { return pilot(x); });
    const auto theta = pilot.coefficients();
    return detail::from_influence(influence, -detail::dot_padded(theta, theta), 2.0,
                                  EstimatorKind::first_order);
}

/// psi_hat_2 = P_n(p_hat_1 + p_hat_2) - integral p_hat_1 p_hat_2.
inline FunctionalEstimate split_expected_density(const PilotDensity& pilot1,
                                                 const PilotDensity& pilot2,
                                                 const CovariateSample& main) {
    require_independent(pilot1.fold(), pilot2.fold(), "the two pilots");
    require_independent(pilot1.fold(), main.fold, "first pilot and evaluation sample");
    require_independent(pilot2.fold(), main.fold, "second pilot and evaluation sample");
    std::vector<double> influence(main.x.size());
    std::transform(main.x.begin(), main.x.end(), influence.begin(),
                   [&](double x) { return pilot1(x) + pilot2(x); });
    return detail::from_influence(
        influence, -detail::dot_padded(pilot1.coefficients(), pilot2.coefficients()), 1.0,
        EstimatorKind::split);
}

/// -integral (p_hat - p)^2 = -sum_j (theta_hat_j - theta_j)^2, absent coefficients as 0.
inline double conditional_bias_oracle_density(const PilotDensity& pilot, const SeriesDensity& truth) {
    const auto a = pilot.coefficients();
    const auto b = truth.coefficients();
    double total = 0.0;
    for (std::size_t j = 0; j < std::max(a.size(), b.size()); ++j) {
        const double d = (j < a.size() ? a[j] : 0.0) - (j < b.size() ? b[j] : 0.0);
        total += d * d;
    }
    return -total;
}

/// Split-estimator conditional bias -integral (p_hat_1 - p)(p_hat_2 - p).
inline double conditional_bias_oracle_density(const PilotDensity& pilot1, const PilotDensity& pilot2,
                                              const SeriesDensity& truth) {
    const auto a = pilot1.coefficients();
    const auto c = pilot2.coefficients();
    const auto b = truth.coefficients();
    double total = 0.0;
    for (std::size_t j = 0; j < std::max({a.size(), b.size(), c.size()}); ++j) {
        const double t = j < b.size() ? b[j] : 0.0;
        total += ((j < a.size() ? a[j] : 0.0) - t) * ((j < c.size() ? c[j] : 0.0) - t);
    }
    return -total;
}

/// P_n{(A - pi_hat)^2}; se = SD((A_i - pi_hat(X_i))^2) / sqrt(n).
inline FunctionalEstimate first_order_cond_variance(const PilotRegression& pilot,
                                                    const PairedSample& main) {
    require_independent(pilot.fold(), main.fold, "pilot and evaluation sample");
    std::vector<double> influence(main.size());
    for (std::size_t i = 0; i < main.size(); ++i) {
        const double r = main.a[i] - pilot(main.x[i]);
        influence[i] = r * r;
    }
    return detail::from_influence(influence, 0.0, 1.0, EstimatorKind::first_order);
}

/// P_n{(A - pi_hat_1)(A - pi_hat_2)}.
inline FunctionalEstimate split_cond_variance(const PilotRegression& pilot1,
                                              const PilotRegression& pilot2,
                                              const PairedSample& main) {
    require_independent(pilot1.fold(), pilot2.fold(), "the two pilots");
    require_independent(pilot1.fold(), main.fold, "first pilot and evaluation sample");
    require_independent(pilot2.fold(), main.fold, "second pilot and evaluation sample");
    std::vector<double> influence(main.size());
    for (std::size_t i = 0; i < main.size(); ++i) {
        influence[i] = (main.a[i] - pilot1(main.x[i])) * (main.a[i] - pilot2(main.x[i]));
    }
    return detail::from_influence(influence, 0.0, 1.0, EstimatorKind::split);
}

namespace detail {

template <class F>
double average_over(std::span<const double> points, F&& f) {
    if (points.empty()) {
        throw DomainError("cannot average over an empty point set");
    }
    double total = 0.0;
    for (double x : points) {
        total += f(x);
    }
    return total / static_cast<double>(points.size());
}

inline std::vector<double> merged_cuts(std::span<const double> a, std::span<const double> b) {
    std::vector<double> cuts(a.begin(), a.end());
    cuts.insert(cuts.end(), b.begin(), b.end());
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    return cuts;
}

}  // namespace detail

/// Conditional bias of the first-order conditional-variance estimator, integral (pi_hat - pi)^2.
/// Quadrature over [0,1] for iid_uniform; average over the grid for fixed_grid.
inline double conditional_bias_oracle_cv(const PilotRegression& pilot, const PropensityModel& truth,
                                         const Design& design) {
    auto sq = [&](double x) {
        const double d = pilot(x) - truth(x);
        return d * d;
    };
    if (design.kind == DesignKind::fixed_grid) {
        return detail::average_over(grid_points(design.n), sq);
    }
    return piecewise_simpson(sq, pilot.breakpoints());
}

/// Split-estimator conditional bias, integral (pi_hat_1 - pi)(pi_hat_2 - pi).
inline double conditional_bias_oracle_cv(const PilotRegression& pilot1, const PilotRegression& pilot2,
                                         const PropensityModel& truth, const Design& design) {
    auto prod = [&](double x) { return (pilot1(x) - truth(x)) * (pilot2(x) - truth(x)); };
    if (design.kind == DesignKind::fixed_grid) {
        return detail::average_over(grid_points(design.n), prod);
    }
    return piecewise_simpson(prod, detail::merged_cuts(pilot1.breakpoints(), pilot2.breakpoints()));
}

/// Sample-average variants: conditional bias given the evaluation covariates.
inline double conditional_bias_oracle_cv_at(const PilotRegression& pilot, const PropensityModel& truth,
                                            std::span<const double> points) {
    return detail::average_over(points, [&](double x) {
        const double d = pilot(x) - truth(x);
        return d * d;
    });
}

inline double conditional_bias_oracle_cv_at(const PilotRegression& pilot1,
                                            const PilotRegression& pilot2,
                                            const PropensityModel& truth,
                                            std::span<const double> points) {
    return detail::average_over(
        points, [&](double x) { return (pilot1(x) - truth(x)) * (pilot2(x) - truth(x)); });
}

}  // namespace quadfun
