#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "quadfun/errors.hpp"
#include "quadfun/rng.hpp"

namespace quadfun {

/// log(exp(a) + exp(b)) without overflow.
inline double log_sum_exp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity() && b == a) {
        return a;
    }
    const double hi = std::max(a, b);
    const double lo = std::min(a, b);
    return hi + std::log1p(std::exp(lo - hi));
}

inline double log_sum_exp(std::span<const double> values) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : values) {
        hi = std::max(hi, v);
    }
    if (!std::isfinite(hi)) {
        return hi;
    }
    double total = 0.0;
    for (double v : values) {
        total += std::exp(v - hi);
    }
    return hi + std::log(total);
}

/// log density of 0.5 N(-theta, 1) + 0.5 N(theta, 1) at x.
inline double mixture_log_density(double theta, double x) {
    constexpr double log_norm = -0.91893853320467274178;  // -0.5 log(2 pi)
    const double a = -0.5 * (x + theta) * (x + theta);
    const double b = -0.5 * (x - theta) * (x - theta);
    return log_norm - std::numbers::ln2 + log_sum_exp(a, b);
}

inline double log_likelihood(double theta, std::span<const double> data) {
    double total = 0.0;
    for (double x : data) {
        total += mixture_log_density(theta, x);
    }
    return total;
}

/// Draws n observations from the symmetric mixture with parameter theta.
inline std::vector<double> sample_mixture(double theta, std::size_t n, Engine& rng) {
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> x(n);
    for (auto& xi : x) {
        const double sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
        xi = sign * theta + noise(rng);
    }
    return x;
}

/// Equispaced parameter grid lo, lo + step, ..., hi.
struct ThetaGrid {
    double lo = 0.0;
    double hi = 3.0;
    double step = 0.01;

    std::size_t size() const {
        return static_cast<std::size_t>(std::llround((hi - lo) / step)) + 1;
    }
    double at(std::size_t i) const { return lo + step * static_cast<double>(i); }
};

enum class ThetaEstimator { moment, grid_mle };

inline std::string to_string(ThetaEstimator e) {
    return e == ThetaEstimator::moment ? "moment" : "grid_mle";
}

struct UniversalConfig {
    std::size_t B = 1;
    double alpha = 0.05;
    ThetaGrid grid;
    ThetaEstimator estimator = ThetaEstimator::moment;

    void validate() const {
        if (B < 1) {
            throw ConfigError("universal: B must be >= 1");
        }
        if (!(alpha > 0.0 && alpha < 1.0)) {
            throw ConfigError("universal: alpha must lie in (0, 1)");
        }
        if (!(grid.hi > grid.lo) || !(grid.step > 0.0)) {
            throw ConfigError("universal: grid needs hi > lo and step > 0");
        }
        if (grid.lo < 0.0) {
            throw ConfigError("universal: grid must lie in theta >= 0");
        }
    }
};

/// Moment estimate sqrt(max(0, m2 - 1)) from E X^2 = 1 + theta^2, or the grid argmax of
/// the likelihood (ties to the smallest theta).
inline double estimate_theta(std::span<const double> d1, ThetaEstimator estimator,
                             const ThetaGrid& grid = {}) {
    if (d1.empty()) {
        throw DomainError("estimate_theta needs at least one observation");
    }
    if (estimator == ThetaEstimator::moment) {
        double m2 = 0.0;
        for (double x : d1) {
            m2 += x * x;
        }
        m2 /= static_cast<double>(d1.size());
        return std::sqrt(std::max(0.0, m2 - 1.0));
    }
    double best = -std::numeric_limits<double>::infinity();
    double arg = grid.at(0);
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const double ll = log_likelihood(grid.at(g), d1);
        if (ll > best) {
            best = ll;
            arg = grid.at(g);
        }
    }
    return arg;
}

/// B independent half-splits of one dataset. Split b draws its permutation from
/// stream b of `seed`; D0 takes the first ceil(n/2) permuted points.
class SplitLikelihoodRatio {
public:
    SplitLikelihoodRatio(std::span<const double> data, const UniversalConfig& config,
                         std::uint64_t seed)
        : config_(config) {
        config_.validate();
        if (data.size() < 2) {
            throw DomainError("universal inference needs at least 2 observations");
        }
        const std::size_t n = data.size();
        const std::size_t n0 = (n + 1) / 2;
        std::vector<std::size_t> order(n);
        for (std::size_t b = 0; b < config_.B; ++b) {
            Engine rng = make_stream(seed, b);
            std::iota(order.begin(), order.end(), 0);
            for (std::size_t i = n - 1; i > 0; --i) {
                const auto j = std::min(i, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i + 1)));
                std::swap(order[i], order[j]);
            }
            Split split;
            std::vector<double> d1;
            for (std::size_t i = 0; i < n; ++i) {
                (i < n0 ? split.d0 : d1).push_back(data[order[i]]);
            }
            split.theta1 = estimate_theta(d1, config_.estimator, config_.grid);
            split.ll0_at_theta1 = log_likelihood(split.theta1, split.d0);
            splits_.push_back(std::move(split));
        }
    }

    const UniversalConfig& config() const noexcept { return config_; }
    std::size_t splits() const noexcept { return splits_.size(); }
    double theta1(std::size_t b) const { return splits_.at(b).theta1; }

    /// log T_b(theta) = l0(theta_hat_1) - l0(theta).
    double log_t(std::size_t b, double theta) const {
        const auto& s = splits_.at(b);
        return s.ll0_at_theta1 - log_likelihood(theta, s.d0);
    }

    /// log of the split average T_bar(theta), aggregated in the log domain.
    double log_tbar(double theta) const {
        std::vector<double> logs(splits_.size());
        for (std::size_t b = 0; b < splits_.size(); ++b) {
            logs[b] = log_t(b, theta);
        }
        return log_sum_exp(logs) - std::log(static_cast<double>(splits_.size()));
    }

    /// T_bar(theta) <= 1/alpha.
    bool contains(double theta) const { return log_tbar(theta) <= -std::log(config_.alpha); }

private:
    struct Split {
        std::vector<double> d0;
        double theta1 = 0.0;
        double ll0_at_theta1 = 0.0;
    };
    UniversalConfig config_;
    std::vector<Split> splits_;
};

struct ConfidenceSet {
    std::vector<double> members;
    double lo = std::numeric_limits<double>::quiet_NaN();
    double hi = std::numeric_limits<double>::quiet_NaN();
    /// Minimizer of T_bar sits on the upper grid edge; the set may be clipped.
    bool clipped = false;
    std::vector<double> log_tbar;  // per grid point
};

inline ConfidenceSet confidence_set(const SplitLikelihoodRatio& lrt) {
    const auto& grid = lrt.config().grid;
    const double threshold = -std::log(lrt.config().alpha);
    ConfidenceSet set;
    set.log_tbar.resize(grid.size());
    std::size_t argmin = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        set.log_tbar[g] = lrt.log_tbar(grid.at(g));
        if (set.log_tbar[g] < set.log_tbar[argmin]) {
            argmin = g;
        }
        if (set.log_tbar[g] <= threshold) {
            set.members.push_back(grid.at(g));
        }
    }
    set.clipped = argmin + 1 == grid.size();
    if (!set.members.empty()) {
        set.lo = set.members.front();
        set.hi = set.members.back();
    }
    return set;
}

inline ConfidenceSet confidence_set(std::span<const double> data, const UniversalConfig& config,
                                    std::uint64_t seed) {
    return confidence_set(SplitLikelihoodRatio(data, config, seed));
}

struct FunctionalConfidenceSet {
    std::vector<double> members;
    double lo = std::numeric_limits<double>::quiet_NaN();
    double hi = std::numeric_limits<double>::quiet_NaN();
    double tolerance = 0.0;
};

/// Profile split-LRT set for psi = f(theta).
///
/// Candidates are the images f(theta_g), deduplicated within the matching
/// tolerance: half the smallest nonzero spacing of f between neighbouring grid
/// points. The profile T_bar(psi) is the smallest T_bar(theta_g) over grid points
/// with |f(theta_g) - psi| <= tolerance.
class ProfileLikelihoodRatio {
public:
    ProfileLikelihoodRatio(const SplitLikelihoodRatio& lrt, std::function<double(double)> f)
        : f_(std::move(f)), threshold_(-std::log(lrt.config().alpha)) {
        const auto& grid = lrt.config().grid;
        images_.resize(grid.size());
        log_tbar_.resize(grid.size());
        for (std::size_t g = 0; g < grid.size(); ++g) {
            images_[g] = f_(grid.at(g));
            log_tbar_[g] = lrt.log_tbar(grid.at(g));
        }
        double spacing = std::numeric_limits<double>::infinity();
        for (std::size_t g = 0; g + 1 < images_.size(); ++g) {
            const double d = std::abs(images_[g + 1] - images_[g]);
            const double scale = 1.0 + std::abs(images_[g]);
            if (d > 1e-12 * scale) {
                spacing = std::min(spacing, d);
            }
        }
        tolerance_ = std::isfinite(spacing) ? 0.5 * spacing : 0.0;
    }

    double tolerance() const noexcept { return tolerance_; }

    /// log of the profile T_bar at psi; +inf when no grid point maps within tolerance.
    double log_profile(double psi) const {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t g = 0; g < images_.size(); ++g) {
            if (std::abs(images_[g] - psi) <= tolerance_) {
                best = std::min(best, log_tbar_[g]);
            }
        }
        return best;
    }

    FunctionalConfidenceSet set() const {
        std::vector<double> candidates = images_;
        std::sort(candidates.begin(), candidates.end());
        std::vector<double> unique;
        for (double c : candidates) {
            if (unique.empty() || c - unique.back() > tolerance_) {
                unique.push_back(c);
            }
        }
        FunctionalConfidenceSet out;
        out.tolerance = tolerance_;
        for (double psi : unique) {
            if (log_profile(psi) <= threshold_) {
                out.members.push_back(psi);
            }
        }
        if (!out.members.empty()) {
            out.lo = out.members.front();
            out.hi = out.members.back();
        }
        return out;
    }

private:
    std::function<double(double)> f_;
    double threshold_;
    std::vector<double> images_;
    std::vector<double> log_tbar_;
    double tolerance_ = 0.0;
};

inline FunctionalConfidenceSet functional_confidence_set(const std::function<double(double)>& f,
                                                         std::span<const double> data,
                                                         const UniversalConfig& config,
                                                         std::uint64_t seed) {
    return ProfileLikelihoodRatio(SplitLikelihoodRatio(data, config, seed), f).set();
}

}  // namespace quadfun
