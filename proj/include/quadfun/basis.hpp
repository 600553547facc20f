#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "quadfun/errors.hpp"
#include "quadfun/quadrature.hpp"

namespace quadfun {

/// A finite family of real functions on [0,1] indexed 1..size().
template <class B>
concept FunctionSystem = requires(const B& b, std::size_t j, double x, std::span<double> out) {
    { b.size() } -> std::convertible_to<std::size_t>;
    { b(j, x) } -> std::convertible_to<double>;
    { b.values(x, out) };
    { b.id() } -> std::convertible_to<std::string>;
};

enum class BasisKind { cosine, haar };

inline std::string to_string(BasisKind kind) {
    return kind == BasisKind::cosine ? "cosine" : "haar";
}

namespace detail {

inline void check_unit_interval(double x) {
    if (!(x >= 0.0 && x <= 1.0)) {
        throw DomainError("point " + std::to_string(x) + " lies outside [0,1]");
    }
}

// Haar index j >= 2 maps to (level, shift) in lexicographic order.
struct HaarIndex {
    unsigned level;
    std::size_t shift;
};

inline HaarIndex haar_index(std::size_t j) {
    const std::size_t m = j - 2;
    unsigned level = 0;
    while ((std::size_t{2} << level) - 1 <= m) {
        ++level;
    }
    return {level, m - ((std::size_t{1} << level) - 1)};
}

inline double haar_value(std::size_t j, double x) {
    if (j == 1) {
        return 1.0;
    }
    const auto [level, shift] = haar_index(j);
    const std::size_t halves = std::size_t{2} << level;
    // x = 1 belongs to the last cell.
    const auto cell = std::min(static_cast<std::size_t>(x * static_cast<double>(halves)), halves - 1);
    if (cell / 2 != shift) {
        return 0.0;
    }
    const double height = std::sqrt(std::ldexp(1.0, static_cast<int>(level)));
    return cell % 2 == 0 ? height : -height;
}

}  // namespace detail

/// Cosine or Haar orthonormal system on [0,1] truncated at max_index.
///
/// cosine: phi_1 = 1, phi_j(x) = sqrt(2) cos((j-1) pi x).
/// haar:   phi_1 = 1, then dyadic wavelets ordered by (level, shift).
class FixedBasis {
public:
    FixedBasis(BasisKind kind, std::size_t max_index) : kind_(kind), max_index_(max_index) {
        if (max_index == 0) {
            throw ConfigError("basis max_index must be positive");
        }
    }

    BasisKind kind() const noexcept { return kind_; }
    std::size_t size() const noexcept { return max_index_; }
    std::string id() const { return to_string(kind_); }

    double operator()(std::size_t j, double x) const {
        if (j < 1 || j > max_index_) {
            throw DomainError("basis index " + std::to_string(j) + " outside 1.." +
                              std::to_string(max_index_));
        }
        detail::check_unit_interval(x);
        return eval_unchecked(j, x);
    }

    /// Fills out[j-1] = phi_j(x) for j = 1..out.size().
    void values(double x, std::span<double> out) const {
        if (out.size() > max_index_) {
            throw DomainError("requested " + std::to_string(out.size()) +
                              " basis values from a basis of size " + std::to_string(max_index_));
        }
        detail::check_unit_interval(x);
        if (kind_ == BasisKind::cosine) {
            cosine_values(x, out);
        } else {
            for (std::size_t j = 1; j <= out.size(); ++j) {
                out[j - 1] = detail::haar_value(j, x);
            }
        }
    }

    /// Points in (0,1) where one of the first k functions may jump.
    std::vector<double> breakpoints(std::size_t k) const {
        std::vector<double> cuts;
        if (kind_ == BasisKind::cosine || k < 2) {
            return cuts;
        }
        const unsigned finest = detail::haar_index(k).level;
        const std::size_t cells = std::size_t{2} << finest;
        for (std::size_t c = 1; c < cells; ++c) {
            cuts.push_back(static_cast<double>(c) / static_cast<double>(cells));
        }
        return cuts;
    }

private:
    double eval_unchecked(std::size_t j, double x) const {
        if (kind_ == BasisKind::cosine) {
            return j == 1 ? 1.0
                          : std::numbers::sqrt2 *
                                std::cos(static_cast<double>(j - 1) * std::numbers::pi * x);
        }
        return detail::haar_value(j, x);
    }

    static void cosine_values(double x, std::span<double> out) {
        for (std::size_t j = 1; j <= out.size(); ++j) {
            out[j - 1] = j == 1 ? 1.0
                                : std::numbers::sqrt2 *
                                      std::cos(static_cast<double>(j - 1) * std::numbers::pi * x);
        }
    }

    BasisKind kind_;
    std::size_t max_index_;
};

struct QuadratureNode {
    double x;
    double weight;
};

/// Composite Simpson nodes on [0,1], split at `cuts` so that each piece is smooth.
/// Piece endpoints sit one ulp inside the piece, which yields the one-sided limits of
/// integrands that jump at the cuts.
inline std::vector<QuadratureNode> piecewise_simpson_rule(std::span<const double> cuts,
                                                          std::size_t nodes = kDefaultQuadratureNodes) {
    check_simpson_nodes(nodes);
    std::vector<double> edges{0.0};
    edges.insert(edges.end(), cuts.begin(), cuts.end());
    edges.push_back(1.0);
    const std::size_t pieces = edges.size() - 1;
    std::size_t per_piece = std::max<std::size_t>(3, (nodes - 1) / pieces + 1);
    if (per_piece % 2 == 0) {
        ++per_piece;
    }
    std::vector<QuadratureNode> rule;
    rule.reserve(pieces * per_piece);
    for (std::size_t p = 0; p < pieces; ++p) {
        const double lo = edges[p];
        const double hi = edges[p + 1];
        const std::size_t intervals = per_piece - 1;
        const double h = (hi - lo) / static_cast<double>(intervals);
        for (std::size_t i = 0; i <= intervals; ++i) {
            double x = lo + h * static_cast<double>(i);
            double w = (i == 0 || i == intervals) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
            if (pieces > 1) {
                if (i == 0) {
                    x = std::nextafter(lo, hi);
                } else if (i == intervals) {
                    x = std::nextafter(hi, lo);
                }
            }
            rule.push_back({std::clamp(x, 0.0, 1.0), w * h / 3.0});
        }
    }
    return rule;
}

template <class F>
double piecewise_simpson(F&& f, std::span<const double> cuts,
                         std::size_t nodes = kDefaultQuadratureNodes) {
    double total = 0.0;
    for (const auto& node : piecewise_simpson_rule(cuts, nodes)) {
        total += node.weight * f(node.x);
    }
    return total;
}

/// Quadrature Gram matrix of the first k basis functions under Lebesgue measure on [0,1].
/// Haar products are piecewise constant, so their integrals are exact cell sums.
inline Eigen::MatrixXd gram_matrix(const FixedBasis& basis, std::size_t k,
                                   std::size_t quadrature_nodes = kDefaultQuadratureNodes) {
    if (quadrature_nodes < 257 || quadrature_nodes % 2 == 0) {
        throw ConfigError("gram_matrix needs an odd node count >= 257, got " +
                          std::to_string(quadrature_nodes));
    }
    if (k == 0 || k > basis.size()) {
        throw DomainError("gram_matrix size " + std::to_string(k) + " outside 1.." +
                          std::to_string(basis.size()));
    }
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k),
                                                 static_cast<Eigen::Index>(k));
    std::vector<double> phi(k);
    if (basis.kind() == BasisKind::haar) {
        const std::size_t cells = basis.breakpoints(k).size() + 1;
        const double width = 1.0 / static_cast<double>(cells);
        for (std::size_t c = 0; c < cells; ++c) {
            basis.values((static_cast<double>(c) + 0.5) * width, phi);
            for (std::size_t a = 0; a < k; ++a) {
                for (std::size_t b = 0; b < k; ++b) {
                    gram(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) +=
                        phi[a] * phi[b] * width;
                }
            }
        }
        return gram;
    }
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a; b < k; ++b) {
            const double v = simpson(
                [&](double x) { return basis(a + 1, x) * basis(b + 1, x); }, 0.0, 1.0,
                quadrature_nodes);
            gram(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = v;
            gram(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = v;
        }
    }
    return gram;
}

/// Lebesgue inner products <f, phi_j> for j = 1..k by Simpson quadrature; each node
/// evaluates the basis once.
template <FunctionSystem B, class F>
std::vector<double> lebesgue_coefficients(F&& f, const B& basis, std::size_t k,
                                          std::span<const double> cuts = {},
                                          std::size_t nodes = kDefaultQuadratureNodes) {
    std::vector<double> coef(k, 0.0);
    std::vector<double> phi(k);
    for (const auto& node : piecewise_simpson_rule(cuts, nodes)) {
        basis.values(node.x, phi);
        const double fx = f(node.x) * node.weight;
        for (std::size_t j = 0; j < k; ++j) {
            coef[j] += fx * phi[j];
        }
    }
    return coef;
}

}  // namespace quadfun
