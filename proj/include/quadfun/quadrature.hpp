#pragma once

#include <cstddef>
#include <string>

#include "quadfun/errors.hpp"

namespace quadfun {

inline constexpr std::size_t kDefaultQuadratureNodes = 2049;

inline void check_simpson_nodes(std::size_t nodes) {
    if (nodes < 3 || nodes % 2 == 0) {
        throw ConfigError("composite Simpson needs an odd node count >= 3, got " +
                          std::to_string(nodes));
    }
}

/// Composite Simpson rule on [a, b] over `nodes` equispaced points (odd count).
template <class F>
double simpson(F&& f, double a, double b, std::size_t nodes = kDefaultQuadratureNodes) {
    check_simpson_nodes(nodes);
    const std::size_t intervals = nodes - 1;
    const double h = (b - a) / static_cast<double>(intervals);
    double odd = 0.0;
    double even = 0.0;
    for (std::size_t i = 1; i < intervals; ++i) {
        const double x = a + h * static_cast<double>(i);
        if (i % 2 == 1) {
            odd += f(x);
        } else {
            even += f(x);
        }
    }
    return h / 3.0 * (f(a) + f(b) + 4.0 * odd + 2.0 * even);
}

}  // namespace quadfun
