#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "catch_amalgamated.hpp"
#include "quadfun/basis.hpp"
#include "quadfun/bias_test.hpp"
#include "quadfun/dgp.hpp"
#include "quadfun/functionals.hpp"
#include "quadfun/pilots.hpp"
#include "quadfun/rng.hpp"
#include "quadfun/stats.hpp"

using namespace quadfun;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

const FoldId kPilot(0);
const FoldId kMain(1);

// Direct transcription of the pair sum over u != v, O(n^2 k).
double naive_u_statistic(std::span<const double> t, const Eigen::MatrixXd& w) {
    const auto n = w.rows();
    double total = 0.0;
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        const double tj = t[static_cast<std::size_t>(j)];
        double linear = 0.0;
        double pairs = 0.0;
        for (Eigen::Index u = 0; u < n; ++u) {
            linear += w(u, j);
            for (Eigen::Index v = 0; v < n; ++v) {
                if (u != v) pairs += w(u, j) * w(v, j);
            }
        }
        total += tj * tj - 2.0 / n * tj * linear + pairs / (static_cast<double>(n) * (n - 1));
    }
    return total;
}

struct Mc {
    double mean = 0.0;
    double se = 0.0;
    double var = 0.0;
};

Mc mc(std::size_t reps, std::uint64_t seed, const std::function<double(Engine&)>& draw) {
    std::vector<double> v(reps);
    for (std::size_t r = 0; r < reps; ++r) {
        Engine rng = make_stream(seed, r);
        v[r] = draw(rng);
    }
    const double sd = sample_sd(v);
    return {mean(v), mc_se(v), sd * sd};
}

}  // namespace

TEST_CASE("constant basis function cancels exactly") {
    const FixedBasis cos(BasisKind::cosine, 4);
    const PilotDensity p({1.0, 0.4}, kPilot);
    const auto est = estimate_bias_k_density(p, {kMain, {0.2, 0.7}}, cos, 1);
    CHECK(est.value == 0.0);
    CHECK(est.se == 0.0);
    CHECK(est.k == 1);
    CHECK(est.basis_id == "cosine");
    CHECK(est.n == 2);
    const auto terms = bias_variance(density_bias_inputs(p, {kMain, {0.2, 0.7, 0.1}}, cos, 1));
    CHECK(terms.first_order == 0.0);
    CHECK(terms.degenerate == 0.0);
}

TEST_CASE("O(nk) evaluation equals the naive pair sum") {
    const FixedBasis cos(BasisKind::cosine, 8);
    const FixedBasis haar(BasisKind::haar, 8);
    const SeriesDensity truth({1.0, 0.3, -0.1});
    const PilotDensity p({1.0, 0.5, 0.05, 0.1}, kPilot);
    Engine rng = make_stream(5, 0);
    for (int trial = 0; trial < 5; ++trial) {
        const CovariateSample main{kMain, sample_density(truth, 200, rng)};
        for (std::size_t k : {1u, 2u, 4u, 8u}) {
            for (const auto* basis : {&cos, &haar}) {
                const auto in = density_bias_inputs(p, main, *basis, k);
                CHECK_THAT(quadratic_bias_statistic(in), WithinAbs(naive_u_statistic(in.target, in.features), 1e-10));
            }
        }
    }
    const PropensityModel pi({0.5, 0.2});
    const PilotRegression r({0.45, 0.1, 0.05}, kPilot, 0.05);
    const auto d = sample_conditional({DesignKind::iid_uniform, 150}, pi, rng);
    const auto in = cv_bias_inputs(r, {kMain, d.x, d.a}, cos, 5);
    CHECK_THAT(quadratic_bias_statistic(in), WithinAbs(naive_u_statistic(in.target, in.features), 1e-10));
}

TEST_CASE("density U-statistic is unbiased for Bias_k") {
    const FixedBasis cos(BasisKind::cosine, 4);
    const SeriesDensity truth({1.0, 0.3});
    const PilotDensity p({1.0, 0.5}, kPilot);
    CHECK_THAT(projected_bias_density(p, truth, cos, 2), WithinAbs(0.04, 1e-15));
    const auto m = mc(4000, 41, [&](Engine& rng) {
        return estimate_bias_k_density(p, {kMain, sample_density(truth, 200, rng)}, cos, 2).value;
    });
    CHECK(std::abs(m.mean - 0.04) <= 4.0 * m.se);

    const PilotDensity exact({1.0, 0.3}, kPilot);
    const auto z = mc(4000, 42, [&](Engine& rng) {
        return estimate_bias_k_density(exact, {kMain, sample_density(truth, 200, rng)}, cos, 4).value;
    });
    CHECK(std::abs(z.mean) <= 4.0 * z.se);
}

TEST_CASE("haar projected bias uses Lebesgue coefficients") {
    const FixedBasis haar(BasisKind::haar, 8);
    const SeriesDensity truth({1.0, 0.3});
    const PilotDensity p({1.0, 0.5}, kPilot);
    const double oracle = projected_bias_density(p, truth, haar, 4);
    const auto m = mc(4000, 43, [&](Engine& rng) {
        return estimate_bias_k_density(p, {kMain, sample_density(truth, 200, rng)}, haar, 4).value;
    });
    CHECK(oracle > 0.0);
    CHECK(std::abs(m.mean - oracle) <= 4.0 * m.se);
}

TEST_CASE("conditional-variance U-statistic") {
    const FixedBasis cos(BasisKind::cosine, 4);
    auto run = [&](const PropensityModel& pi, const PilotRegression& r, std::size_t k, std::uint64_t seed) {
        return mc(4000, seed, [&](Engine& rng) {
            const auto d = sample_conditional({DesignKind::iid_uniform, 200}, pi, rng);
            return estimate_bias_k_cv(r, {kMain, d.x, d.a}, cos, k).value;
        });
    };
    const PropensityModel flat({0.4});
    const PilotRegression half({0.5}, kPilot, 0.05);
    const auto one = run(flat, half, 1, 51);
    CHECK(std::abs(one.mean - 0.01) <= 4.0 * one.se);

    const PropensityModel pi({0.5, 0.1});
    const PilotRegression exact({0.5, 0.1}, kPilot, 0.05);
    const auto zero = run(pi, exact, 4, 52);
    CHECK(std::abs(zero.mean) <= 4.0 * zero.se);

    const PilotRegression bumped({0.5, 0.3}, kPilot, 0.05);
    CHECK_THAT(projected_bias_cv(bumped, pi, cos, 2), WithinAbs(0.04, 1e-10));
    const auto shifted = run(pi, bumped, 2, 53);
    CHECK(std::abs(shifted.mean - 0.04) <= 4.0 * shifted.se);
}

TEST_CASE("variance estimate tracks the Monte Carlo variance") {
    const FixedBasis cos(BasisKind::cosine, 2);
    const SeriesDensity truth({1.0, 0.3});
    const PilotDensity p({1.0, 0.5}, kPilot);
    std::vector<double> values;
    std::vector<double> var_hat;
    for (std::size_t r = 0; r < 10000; ++r) {
        Engine rng = make_stream(61, r);
        const auto est = estimate_bias_k_density(p, {kMain, sample_density(truth, 2000, rng)}, cos, 2);
        values.push_back(est.value);
        var_hat.push_back(est.se * est.se);
    }
    const double sd = sample_sd(values);
    CHECK_THAT(mean(var_hat), WithinRel(sd * sd, 0.2));
}

TEST_CASE("first-order variance term halves when n doubles") {
    const FixedBasis cos(BasisKind::cosine, 2);
    const SeriesDensity truth({1.0, 0.3});
    const PilotDensity p({1.0, 0.5}, kPilot);
    std::vector<double> small, large;
    for (std::size_t r = 0; r < 400; ++r) {
        Engine a = make_stream(62, r);
        Engine b = make_stream(62, r);
        small.push_back(bias_variance(density_bias_inputs(p, {kMain, sample_density(truth, 1000, a)}, cos, 2)).first_order);
        large.push_back(bias_variance(density_bias_inputs(p, {kMain, sample_density(truth, 2000, b)}, cos, 2)).first_order);
    }
    CHECK_THAT(mean(small) / mean(large), WithinAbs(2.0, 0.1));
}

TEST_CASE("bias_k errors") {
    const FixedBasis cos(BasisKind::cosine, 3);
    const PilotDensity p({1.0, 0.4}, kPilot);
    CHECK_THROWS_AS(estimate_bias_k_density(p, {kMain, {0.5}}, cos, 1), DomainError);
    CHECK_THROWS_AS(estimate_bias_k_density(p, {kMain, {0.2, 0.5}}, cos, 4), DomainError);
    CHECK_THROWS_AS(estimate_bias_k_density(p, {kMain, {0.2, 0.5}}, cos, 0), DomainError);
    CHECK_THROWS_AS(estimate_bias_k_density(p, {kPilot, {0.2, 0.5}}, cos, 2), FoldViolation);
}

TEST_CASE("test_bias decision rule") {
    BiasEstimate b;
    b.value = 0.0;
    b.se = 0.01;
    auto r = test_bias(b, 0.1, 0.25, 0.05);
    CHECK_FALSE(r.reject);
    CHECK_THAT(r.statistic, WithinAbs(-2.5, 1e-12));
    CHECK(r.ci_lo <= b.value);
    CHECK(r.ci_hi >= b.value);
    CHECK_THAT(r.ci_hi - r.ci_lo, WithinAbs(2.0 * 1.959963984540054 * 0.01, 1e-12));

    b.value = 0.05;
    r = test_bias(b, 0.1, 0.25, 0.05);  // (0.05 - 0.025) / 0.01 = 2.5 > 1.645
    CHECK(r.reject);
    CHECK_THAT(r.statistic, WithinAbs(2.5, 1e-12));

    b.value = 0.0406;  // statistic 1.56 just below z_0.95
    CHECK_FALSE(test_bias(b, 0.1, 0.25, 0.05).reject);

    BiasEstimate degenerate;
    degenerate.value = 0.1;
    degenerate.se = 0.0;
    auto d = test_bias(degenerate, 0.1, 0.25, 0.05);
    CHECK(d.reject);
    CHECK(d.statistic == std::numeric_limits<double>::infinity());
    degenerate.value = 0.0;
    d = test_bias(degenerate, 0.1, 0.25, 0.05);
    CHECK_FALSE(d.reject);

    CHECK_THROWS_AS(test_bias(b, -1.0), DomainError);
    CHECK_THROWS_AS(test_bias(b, 0.1, -0.1), DomainError);
    CHECK_THROWS_AS(test_bias(b, 0.1, 0.25, 1.0), DomainError);
    CHECK(kDefaultBiasTolerance == 0.25);
}

TEST_CASE("default projection dimension") {
    CHECK(default_projection_dimension(1) == 1);
    CHECK(default_projection_dimension(7) == 1);
    CHECK(default_projection_dimension(8) == 2);
    CHECK(default_projection_dimension(200) == 5);
    CHECK(default_projection_dimension(1000) == 10);
    CHECK(default_projection_dimension(2000) == 12);
}
