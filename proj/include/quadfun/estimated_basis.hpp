#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "quadfun/basis.hpp"
#include "quadfun/errors.hpp"

namespace quadfun {

/// An evaluable real function on [0,1].
using Predictor = std::function<double(double)>;

inline constexpr double kDefaultDropTolerance = 1e-6;

/// Orthonormalized span of a dictionary of functions under the empirical inner
/// product <u, v> = (1/n) sum_i u(X_i) v(X_i) of a covariate sample.
///
/// The orthonormal functions are q(x) = T d(x), where d(x) holds the retained
/// dictionary members evaluated at x and T is lower triangular. Because the
/// transform is stored, q is defined everywhere on [0,1], not only on the sample.
class EstimatedBasis {
public:
    EstimatedBasis(std::vector<Predictor> dictionary, Eigen::MatrixXd transform,
                   std::vector<std::size_t> retained, std::vector<double> inner_product_sample)
        : dictionary_(std::move(dictionary)),
          transform_(std::move(transform)),
          retained_(std::move(retained)),
          sample_(std::move(inner_product_sample)) {}

    std::size_t size() const noexcept { return retained_.size(); }
    std::string id() const { return "estimated"; }

    const Eigen::MatrixXd& transform() const noexcept { return transform_; }
    const std::vector<std::size_t>& retained() const noexcept { return retained_; }
    const std::vector<double>& inner_product_sample() const noexcept { return sample_; }
    std::size_t dictionary_size() const noexcept { return dictionary_.size(); }

    /// Retained dictionary members at x, in retained order.
    Eigen::VectorXd dictionary_values(double x) const {
        Eigen::VectorXd d(static_cast<Eigen::Index>(retained_.size()));
        for (std::size_t r = 0; r < retained_.size(); ++r) {
            d(static_cast<Eigen::Index>(r)) = dictionary_[retained_[r]](x);
        }
        return d;
    }

    void values(double x, std::span<double> out) const {
        if (out.size() > size()) {
            throw DomainError("requested " + std::to_string(out.size()) +
                              " values from an estimated basis of size " + std::to_string(size()));
        }
        detail::check_unit_interval(x);
        const Eigen::VectorXd d = dictionary_values(x);
        for (std::size_t j = 0; j < out.size(); ++j) {
            const auto row = static_cast<Eigen::Index>(j);
            out[j] = transform_.row(row).head(row + 1).dot(d.head(row + 1));
        }
    }

    double operator()(std::size_t j, double x) const {
        if (j < 1 || j > size()) {
            throw DomainError("estimated basis index " + std::to_string(j) + " outside 1.." +
                              std::to_string(size()));
        }
        std::vector<double> all(j);
        values(x, all);
        return all[j - 1];
    }

    /// Empirical Gram matrix of the basis on its inner-product sample.
    Eigen::MatrixXd empirical_gram() const {
        const auto k = static_cast<Eigen::Index>(size());
        Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(k, k);
        std::vector<double> q(size());
        for (double x : sample_) {
            values(x, q);
            const Eigen::Map<const Eigen::VectorXd> v(q.data(), k);
            gram.noalias() += v * v.transpose();
        }
        return gram / static_cast<double>(sample_.size());
    }

private:
    std::vector<Predictor> dictionary_;
    Eigen::MatrixXd transform_;
    std::vector<std::size_t> retained_;
    std::vector<double> sample_;
};

/// Modified Gram-Schmidt over `dictionary` in the empirical inner product of `sample`.
///
/// A member is dropped when its residual norm falls below drop_tol times its
/// original norm. Any projection coefficient above 0.5 in magnitude triggers one
/// re-orthogonalization pass for that member.
inline EstimatedBasis orthonormalize(std::vector<Predictor> dictionary,
                                     std::span<const double> sample,
                                     double drop_tol = kDefaultDropTolerance) {
    if (!(drop_tol > 0.0 && drop_tol < 1.0)) {
        throw ConfigError("drop_tol must lie in (0, 1)");
    }
    if (sample.size() < dictionary.size()) {
        throw ConfigError("orthonormalize needs at least as many sample points (" +
                          std::to_string(sample.size()) + ") as dictionary members (" +
                          std::to_string(dictionary.size()) + ")");
    }
    const auto n = static_cast<Eigen::Index>(sample.size());
    const double inv_n = 1.0 / static_cast<double>(n);
    auto inner = [&](const Eigen::VectorXd& u, const Eigen::VectorXd& v) { return u.dot(v) * inv_n; };

    std::vector<Eigen::VectorXd> q;       // orthonormal sample vectors
    std::vector<Eigen::VectorXd> rows;    // transform rows over the full dictionary
    std::vector<std::size_t> retained;
    for (std::size_t member = 0; member < dictionary.size(); ++member) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            v(i) = dictionary[member](sample[static_cast<std::size_t>(i)]);
        }
        const double original = std::sqrt(inner(v, v));
        if (!(original > 0.0) || !std::isfinite(original)) {
            continue;
        }
        Eigen::VectorXd row = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dictionary.size()));
        row(static_cast<Eigen::Index>(member)) = 1.0;

        double largest = 0.0;
        for (int pass = 0; pass < 2; ++pass) {
            largest = 0.0;
            for (std::size_t l = 0; l < q.size(); ++l) {
                const double c = inner(q[l], v);
                v -= c * q[l];
                row -= c * rows[l];
                largest = std::max(largest, std::abs(c) / (pass == 0 ? original : 1.0));
            }
            if (pass == 0 && largest <= 0.5) {
                break;
            }
        }
        const double residual = std::sqrt(inner(v, v));
        if (residual < drop_tol * original) {
            continue;
        }
        q.push_back(v / residual);
        rows.push_back(row / residual);
        retained.push_back(member);
    }
    if (retained.empty()) {
        throw DegenerateDictionary("every dictionary member was dropped: zero span");
    }

    const auto r = static_cast<Eigen::Index>(retained.size());
    Eigen::MatrixXd transform = Eigen::MatrixXd::Zero(r, r);
    for (Eigen::Index a = 0; a < r; ++a) {
        for (Eigen::Index b = 0; b <= a; ++b) {
            transform(a, b) = rows[static_cast<std::size_t>(a)](
                static_cast<Eigen::Index>(retained[static_cast<std::size_t>(b)]));
        }
    }
    return EstimatedBasis(std::move(dictionary), std::move(transform), std::move(retained),
                          std::vector<double>(sample.begin(), sample.end()));
}

static_assert(FunctionSystem<FixedBasis>);
static_assert(FunctionSystem<EstimatedBasis>);

}  // namespace quadfun
