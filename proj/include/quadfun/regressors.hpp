#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "quadfun/dgp.hpp"
#include "quadfun/errors.hpp"
#include "quadfun/estimated_basis.hpp"
#include "quadfun/pilots.hpp"
#include "quadfun/text.hpp"

namespace quadfun {

enum class RegressorKind { knn, kernel_nw, series_ols, boosted_stumps };

struct RegressorSpec {
    RegressorKind kind = RegressorKind::knn;
    std::size_t neighbors = 5;
    double bandwidth = 0.05;
    std::size_t truncation = 5;
    std::size_t stumps = 50;
    double shrinkage = 0.1;

    static RegressorSpec knn(std::size_t neighbors) {
        RegressorSpec s;
        s.kind = RegressorKind::knn;
        s.neighbors = neighbors;
        return s;
    }
    static RegressorSpec kernel(double bandwidth) {
        RegressorSpec s;
        s.kind = RegressorKind::kernel_nw;
        s.bandwidth = bandwidth;
        return s;
    }
    static RegressorSpec series(std::size_t truncation) {
        RegressorSpec s;
        s.kind = RegressorKind::series_ols;
        s.truncation = truncation;
        return s;
    }
    static RegressorSpec boosted(std::size_t stumps, double shrinkage) {
        RegressorSpec s;
        s.kind = RegressorKind::boosted_stumps;
        s.stumps = stumps;
        s.shrinkage = shrinkage;
        return s;
    }

    void validate() const {
        const bool ok = [&] {
            switch (kind) {
                case RegressorKind::knn: return neighbors > 0;
                case RegressorKind::kernel_nw: return bandwidth > 0.0 && std::isfinite(bandwidth);
                case RegressorKind::series_ols: return truncation > 0;
                case RegressorKind::boosted_stumps:
                    return stumps > 0 && shrinkage > 0.0 && std::isfinite(shrinkage);
            }
            return false;
        }();
        if (!ok) {
            throw ConfigError("regressor " + label() + " needs positive hyperparameters");
        }
    }

    /// Round-trips through parse_regressor_spec, e.g. "knn:25" or "boosted_stumps:50:0.1".
    std::string label() const {
        switch (kind) {
            case RegressorKind::knn: return "knn:" + std::to_string(neighbors);
            case RegressorKind::kernel_nw: return "kernel_nw:" + shortest_text(bandwidth);
            case RegressorKind::series_ols: return "series_ols:" + std::to_string(truncation);
            case RegressorKind::boosted_stumps:
                return "boosted_stumps:" + std::to_string(stumps) + ":" + shortest_text(shrinkage);
        }
        return "unknown";
    }
};

inline RegressorSpec parse_regressor_spec(const std::string& text) {
    std::vector<std::string> parts;
    std::stringstream in(text);
    std::string part;
    while (std::getline(in, part, ':')) {
        parts.push_back(part);
    }
    auto fail = [&]() -> RegressorSpec {
        throw ConfigError("cannot parse regressor '" + text +
                          "' (expected knn:K, kernel_nw:H, series_ols:J or boosted_stumps:M:NU)");
    };
    if (parts.empty()) {
        return fail();
    }
    try {
        RegressorSpec spec;
        if (parts[0] == "knn" && parts.size() == 2) {
            spec = RegressorSpec::knn(std::stoul(parts[1]));
        } else if (parts[0] == "kernel_nw" && parts.size() == 2) {
            spec = RegressorSpec::kernel(std::stod(parts[1]));
        } else if (parts[0] == "series_ols" && parts.size() == 2) {
            spec = RegressorSpec::series(std::stoul(parts[1]));
        } else if (parts[0] == "boosted_stumps" && parts.size() == 3) {
            spec = RegressorSpec::boosted(std::stoul(parts[1]), std::stod(parts[2]));
        } else {
            return fail();
        }
        spec.validate();
        return spec;
    } catch (const std::logic_error&) {
        return fail();
    }
}

namespace detail {

struct SortedData {
    std::vector<double> x;
    std::vector<double> y;
};

inline SortedData sort_by_x(std::span<const double> x, std::span<const double> y) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    SortedData out;
    out.x.reserve(x.size());
    out.y.reserve(x.size());
    for (std::size_t i : order) {
        out.x.push_back(x[i]);
        out.y.push_back(y[i]);
    }
    return out;
}

}  // namespace detail

/// Mean response of the k nearest training points; distance ties go to the smaller x.
class KnnRegressor {
public:
    KnnRegressor(std::span<const double> x, std::span<const double> y, std::size_t neighbors)
        : data_(detail::sort_by_x(x, y)), k_(std::min(neighbors, x.size())) {}

    double operator()(double q) const {
        const auto& xs = data_.x;
        std::size_t right = static_cast<std::size_t>(std::lower_bound(xs.begin(), xs.end(), q) - xs.begin());
        std::size_t left = right;  // candidates are [.., left) and [right, ..)
        double total = 0.0;
        for (std::size_t taken = 0; taken < k_; ++taken) {
            const bool has_left = left > 0;
            const bool has_right = right < xs.size();
            const bool take_left =
                has_left && (!has_right || q - xs[left - 1] <= xs[right] - q);
            if (take_left) {
                --left;
                total += data_.y[left];
            } else {
                total += data_.y[right];
                ++right;
            }
        }
        return total / static_cast<double>(k_);
    }

private:
    detail::SortedData data_;
    std::size_t k_;
};

/// Nadaraya-Watson with a Gaussian kernel. Falls back to the global mean where the
/// kernel weights sum below 1e-12.
class KernelRegressor {
public:
    KernelRegressor(std::span<const double> x, std::span<const double> y, double bandwidth)
        : x_(x.begin(), x.end()), y_(y.begin(), y.end()), h_(bandwidth) {
        global_mean_ = std::accumulate(y_.begin(), y_.end(), 0.0) / static_cast<double>(y_.size());
    }

    double operator()(double q) const {
        double num = 0.0;
        double den = 0.0;
        for (std::size_t i = 0; i < x_.size(); ++i) {
            const double u = (q - x_[i]) / h_;
            const double w = std::exp(-0.5 * u * u);
            num += w * y_[i];
            den += w;
        }
        return den < 1e-12 ? global_mean_ : num / den;
    }

private:
    std::vector<double> x_;
    std::vector<double> y_;
    double h_;
    double global_mean_ = 0.0;
};

/// Unclipped least-squares fit on the first J cosine functions.
class SeriesRegressor {
public:
    /// Plain least squares; the ridge is applied only when that system is singular.
    SeriesRegressor(std::span<const double> x, std::span<const double> y, std::size_t truncation,
                    double ridge = 1e-8)
        : coefficients_(fit(x, y, truncation, ridge)) {}

    std::span<const double> coefficients() const noexcept { return coefficients_; }
    double operator()(double q) const { return cosine_series(coefficients_, q); }

private:
    static std::vector<double> fit(std::span<const double> x, std::span<const double> y, std::size_t truncation,
                                   double ridge) {
        try {
            return fit_series_coefficients(x, y, truncation, 0.0);
        } catch (const FitError&) {
            return fit_series_coefficients(x, y, truncation, ridge);
        }
    }

    std::vector<double> coefficients_;
};

/// L2 boosting of depth-1 threshold stumps from the mean. The fitted sum is
/// piecewise constant, stored as sorted thresholds and segment values.
class BoostedStumps {
public:
    BoostedStumps(std::span<const double> x, std::span<const double> y, std::size_t rounds,
                  double shrinkage) {
        const auto data = detail::sort_by_x(x, y);
        const std::size_t n = data.x.size();
        const double start = std::accumulate(data.y.begin(), data.y.end(), 0.0) / static_cast<double>(n);
        std::vector<double> fit(n, start);
        struct Stump {
            double threshold;
            double left;
            double right;
        };
        std::vector<Stump> stumps;
        std::vector<double> resid(n);
        for (std::size_t round = 0; round < rounds; ++round) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                resid[i] = data.y[i] - fit[i];
                total += resid[i];
            }
            // Best split between distinct consecutive x values by SSE reduction.
            double best_gain = -1.0;
            std::size_t best = n;
            double left_sum = 0.0;
            for (std::size_t i = 0; i + 1 < n; ++i) {
                left_sum += resid[i];
                if (data.x[i] == data.x[i + 1]) {
                    continue;
                }
                const double nl = static_cast<double>(i + 1);
                const double nr = static_cast<double>(n - i - 1);
                const double right_sum = total - left_sum;
                const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr;
                if (gain > best_gain) {
                    best_gain = gain;
                    best = i;
                }
            }
            Stump s{};
            if (best == n) {
                const double m = total / static_cast<double>(n);
                s = {data.x.empty() ? 0.0 : data.x.back() + 1.0, m, m};
            } else {
                double lsum = 0.0;
                for (std::size_t i = 0; i <= best; ++i) {
                    lsum += resid[i];
                }
                s.threshold = 0.5 * (data.x[best] + data.x[best + 1]);
                s.left = lsum / static_cast<double>(best + 1);
                s.right = (total - lsum) / static_cast<double>(n - best - 1);
            }
            for (std::size_t i = 0; i < n; ++i) {
                fit[i] += shrinkage * (data.x[i] < s.threshold ? s.left : s.right);
            }
            stumps.push_back(s);
        }

        for (const auto& s : stumps) {
            thresholds_.push_back(s.threshold);
        }
        std::sort(thresholds_.begin(), thresholds_.end());
        thresholds_.erase(std::unique(thresholds_.begin(), thresholds_.end()), thresholds_.end());
        // Segment v covers [thresholds_[v-1], thresholds_[v]).
        segments_.assign(thresholds_.size() + 1, start);
        for (std::size_t v = 0; v < segments_.size(); ++v) {
            const double probe = v == 0 ? -std::numeric_limits<double>::infinity() : thresholds_[v - 1];
            for (const auto& s : stumps) {
                segments_[v] += shrinkage * (probe < s.threshold ? s.left : s.right);
            }
        }
    }

    double operator()(double q) const {
        const auto v = static_cast<std::size_t>(
            std::upper_bound(thresholds_.begin(), thresholds_.end(), q) - thresholds_.begin());
        return segments_[v];
    }

private:
    std::vector<double> thresholds_;
    std::vector<double> segments_;
};

/// Fits one regressor of the menu; the result is an immutable total function on [0,1].
inline Predictor fit_regressor(const RegressorSpec& spec, std::span<const double> x,
                               std::span<const double> residuals) {
    if (x.empty() || x.size() != residuals.size()) {
        throw DomainError("fit_regressor needs nonempty, equally sized training data");
    }
    spec.validate();
    switch (spec.kind) {
        case RegressorKind::knn: {
            auto model = std::make_shared<const KnnRegressor>(x, residuals, spec.neighbors);
            return [model](double q) { return (*model)(q); };
        }
        case RegressorKind::kernel_nw: {
            auto model = std::make_shared<const KernelRegressor>(x, residuals, spec.bandwidth);
            return [model](double q) { return (*model)(q); };
        }
        case RegressorKind::series_ols: {
            if (x.size() <= spec.truncation) {
                throw DomainError("series_ols needs more than J training points");
            }
            auto model = std::make_shared<const SeriesRegressor>(x, residuals, spec.truncation);
            return [model](double q) { return (*model)(q); };
        }
        case RegressorKind::boosted_stumps: {
            auto model = std::make_shared<const BoostedStumps>(x, residuals, spec.stumps, spec.shrinkage);
            return [model](double q) { return (*model)(q); };
        }
    }
    throw ConfigError("unknown regressor kind");
}

/// knn {5, 25}, kernel bandwidths {0.05, 0.2}, series J {5, 15}, 50 stumps at 0.1.
inline std::vector<RegressorSpec> default_regressor_menu() {
    return {RegressorSpec::knn(5),      RegressorSpec::knn(25),    RegressorSpec::kernel(0.05),
            RegressorSpec::kernel(0.2), RegressorSpec::series(5),  RegressorSpec::series(15),
            RegressorSpec::boosted(50, 0.1)};
}

}  // namespace quadfun
