#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "catch_amalgamated.hpp"
#include "quadfun/dgp.hpp"
#include "quadfun/functionals.hpp"
#include "quadfun/pilots.hpp"
#include "quadfun/rng.hpp"
#include "quadfun/stats.hpp"

using namespace quadfun;
using Catch::Matchers::WithinAbs;

namespace {

// Monte Carlo mean of estimate - target with its standard error.
struct McResult {
    double mean = 0.0;
    double se = 0.0;
};

McResult monte_carlo(std::size_t reps, std::uint64_t seed, const std::function<double(Engine&)>& draw) {
    std::vector<double> v(reps);
    for (std::size_t r = 0; r < reps; ++r) {
        Engine rng = make_stream(seed, r);
        v[r] = draw(rng);
    }
    return {mean(v), mc_se(v)};
}

double simpson_oracle(const std::function<double(double)>& f) {
    const int m = 4096;
    const double h = 1.0 / m;
    double s = f(0.0) + f(1.0);
    for (int i = 1; i < m; ++i) s += (i % 2 ? 4.0 : 2.0) * f(i * h);
    return s * h / 3.0;
}

const FoldId kPilotFold(0);
const FoldId kPilotFold2(1);
const FoldId kMainFold(2);

}  // namespace

TEST_CASE("uniform pilot gives exactly one") {
    const PilotDensity uniform({1.0}, kPilotFold);
    const CovariateSample main{kMainFold, {0.1, 0.5, 0.93, 0.2}};
    const auto est = first_order_expected_density(uniform, main);
    CHECK(est.value == 1.0);
    CHECK(est.se == 0.0);
    CHECK(est.n == 4);
    CHECK(est.estimator_kind == EstimatorKind::first_order);
    const PilotDensity uniform2({1.0}, kPilotFold2);
    CHECK(split_expected_density(uniform, uniform2, main).value == 1.0);
}

TEST_CASE("first-order density estimator formula") {
    const PilotDensity p({1.0, 0.3, -0.2}, kPilotFold);
    const CovariateSample main{kMainFold, {0.05, 0.4, 0.41, 0.8, 0.99}};
    const auto est = first_order_expected_density(p, main);
    std::vector<double> vals;
    for (double x : main.x) vals.push_back(p(x));
    CHECK_THAT(est.value, WithinAbs(2.0 * mean(vals) - (1.0 + 0.09 + 0.04), 1e-14));
    CHECK_THAT(est.se, WithinAbs(2.0 * sample_sd(vals) / std::sqrt(5.0), 1e-14));
    // plug-in versus one-step identity on the same data
    const auto plug = plugin_expected_density(p);
    CHECK_THAT(est.value - plug.value, WithinAbs(2.0 * (mean(vals) - plug.value), 1e-14));
    CHECK(plug.estimator_kind == EstimatorKind::plugin);
}

TEST_CASE("fold discipline is enforced") {
    const PilotDensity p({1.0, 0.3}, kMainFold);
    const CovariateSample main{kMainFold, {0.2, 0.3}};
    CHECK_THROWS_AS(first_order_expected_density(p, main), FoldViolation);
    const PilotDensity q({1.0}, kPilotFold);
    const PilotDensity q_same({1.0}, kPilotFold);
    CHECK_THROWS_AS(split_expected_density(q, q_same, main), FoldViolation);
    const PilotRegression r({0.5}, kMainFold, 0.05);
    const PairedSample pm{kMainFold, {0.2}, {1.0}};
    CHECK_THROWS_AS(first_order_cond_variance(r, pm), FoldViolation);
    CHECK_THROWS_AS(first_order_expected_density(q, CovariateSample{kMainFold, {}}), DomainError);
}

TEST_CASE("density oracle closed form and quadrature") {
    const SeriesDensity truth({1.0, 0.3});
    CHECK(conditional_bias_oracle_density(PilotDensity({1.0, 0.3}, kPilotFold), truth) == 0.0);
    const PilotDensity p({1.0, 0.5}, kPilotFold);
    CHECK_THAT(conditional_bias_oracle_density(p, truth), WithinAbs(-0.04, 1e-15));
    const PilotDensity wide({1.0, 0.1, 0.2, -0.15}, kPilotFold);
    const double quad = -simpson_oracle([&](double x) { return (wide(x) - truth(x)) * (wide(x) - truth(x)); });
    CHECK_THAT(conditional_bias_oracle_density(wide, truth), WithinAbs(quad, 1e-8));
    const PilotDensity other({1.0, 0.4, 0.0, 0.1}, kPilotFold2);
    const double prod = -simpson_oracle([&](double x) { return (wide(x) - truth(x)) * (other(x) - truth(x)); });
    CHECK_THAT(conditional_bias_oracle_density(wide, other, truth), WithinAbs(prod, 1e-8));
}

TEST_CASE("first-order density bias matches the monotone oracle") {
    const SeriesDensity truth({1.0, 0.3});
    const PilotDensity p({1.0, 0.5}, kPilotFold);
    const auto mc = monte_carlo(4000, 21, [&](Engine& rng) {
        return first_order_expected_density(p, {kMainFold, sample_density(truth, 200, rng)}).value - 1.09;
    });
    CHECK(std::abs(mc.mean - (-0.04)) <= 4.0 * mc.se);
}

TEST_CASE("split density estimator: sign flip and double robustness") {
    const SeriesDensity truth({1.0, 0.3});
    const PilotDensity up({1.0, 0.5}, kPilotFold);
    const PilotDensity down({1.0, 0.1}, kPilotFold2);
    CHECK_THAT(conditional_bias_oracle_density(up, down, truth), WithinAbs(0.04, 1e-15));
    const auto flip = monte_carlo(4000, 22, [&](Engine& rng) {
        return split_expected_density(up, down, {kMainFold, sample_density(truth, 200, rng)}).value - 1.09;
    });
    CHECK(std::abs(flip.mean - 0.04) <= 4.0 * flip.se);

    const PilotDensity exact({1.0, 0.3}, kPilotFold);
    const PilotDensity arbitrary({1.0, -0.2, 0.3}, kPilotFold2);
    const auto dr = monte_carlo(4000, 23, [&](Engine& rng) {
        return split_expected_density(exact, arbitrary, {kMainFold, sample_density(truth, 200, rng)}).value - 1.09;
    });
    CHECK(std::abs(dr.mean) <= 4.0 * dr.se);
}

TEST_CASE("conditional variance estimators") {
    const PairedSample ones{kMainFold, {0.1, 0.6, 0.9}, {1, 1, 1}};
    const PilotRegression high({1.0}, kPilotFold, 0.05);  // clamps to 0.95
    const auto est = first_order_cond_variance(high, ones);
    CHECK_THAT(est.value, WithinAbs(0.05 * 0.05, 1e-16));
    CHECK(est.se == 0.0);

    const PilotRegression a({0.4, 0.1}, kPilotFold, 0.05);
    const PilotRegression a2({0.4, 0.1}, kPilotFold2, 0.05);
    const PairedSample main{kMainFold, {0.1, 0.3, 0.5, 0.8}, {1, 0, 0, 1}};
    CHECK(split_cond_variance(a, a2, main).value == first_order_cond_variance(a, main).value);
    CHECK(split_cond_variance(a, a2, main).se == first_order_cond_variance(a, main).se);
}

TEST_CASE("conditional variance Monte Carlo biases") {
    const PropensityModel truth({0.5});
    const PilotRegression exact({0.5}, kPilotFold, 0.05);
    const PilotRegression offset({0.6}, kPilotFold, 0.05);
    auto draw = [&](const PilotRegression& p) {
        return [&truth, p](Engine& rng) {
            const auto d = sample_conditional({DesignKind::iid_uniform, 200}, truth, rng);
            return first_order_cond_variance(p, {kMainFold, d.x, d.a}).value - 0.25;
        };
    };
    const auto unbiased = monte_carlo(4000, 31, draw(exact));
    CHECK(std::abs(unbiased.mean) <= 4.0 * unbiased.se);
    const auto shifted = monte_carlo(4000, 32, draw(offset));
    CHECK(std::abs(shifted.mean - 0.01) <= 4.0 * shifted.se);

    const PropensityModel pi({0.5, 0.1});
    const double psi = true_expected_cond_variance(pi, {DesignKind::iid_uniform, 1});
    const PilotRegression up({0.5, 0.3}, kPilotFold, 0.05);
    const PilotRegression down({0.5, -0.1}, kPilotFold2, 0.05);
    CHECK_FALSE(up.clipping_binds());
    CHECK_FALSE(down.clipping_binds());
    const auto flip = monte_carlo(4000, 33, [&](Engine& rng) {
        const auto d = sample_conditional({DesignKind::iid_uniform, 200}, pi, rng);
        return split_cond_variance(up, down, {kMainFold, d.x, d.a}).value - psi;
    });
    CHECK(std::abs(flip.mean + 0.04) <= 4.0 * flip.se);

    const PilotRegression exact_pi({0.5, 0.1}, kPilotFold, 0.05);
    const PilotRegression wild({0.3, 0.2, 0.1}, kPilotFold2, 0.05);
    const auto dr = monte_carlo(4000, 34, [&](Engine& rng) {
        const auto d = sample_conditional({DesignKind::iid_uniform, 200}, pi, rng);
        return split_cond_variance(exact_pi, wild, {kMainFold, d.x, d.a}).value - psi;
    });
    CHECK(std::abs(dr.mean) <= 4.0 * dr.se);
}

TEST_CASE("conditional variance oracles") {
    const PropensityModel truth({0.5, 0.1});
    const PilotRegression same({0.5, 0.1}, kPilotFold, 0.05);
    CHECK(conditional_bias_oracle_cv(same, truth, {DesignKind::iid_uniform, 10}) == 0.0);
    const PilotRegression shifted({0.6, 0.1}, kPilotFold, 0.05);
    CHECK_THAT(conditional_bias_oracle_cv(shifted, truth, {DesignKind::iid_uniform, 10}), WithinAbs(0.01, 1e-12));
    CHECK_THAT(conditional_bias_oracle_cv(shifted, truth, {DesignKind::fixed_grid, 10}), WithinAbs(0.01, 1e-12));
    const PilotRegression series({0.5, 0.3}, kPilotFold, 0.05);
    CHECK_THAT(conditional_bias_oracle_cv(series, truth, {DesignKind::iid_uniform, 10}), WithinAbs(0.04, 1e-8));
    const PilotRegression minus({0.5, -0.1}, kPilotFold2, 0.05);
    CHECK_THAT(conditional_bias_oracle_cv(series, minus, truth, {DesignKind::iid_uniform, 10}),
               WithinAbs(-0.04, 1e-8));

    // step perturbations are integrated piecewise
    const std::vector<StepPerturbation> step{{0.3, 0.1}};
    const std::vector<double> none;
    const auto stepped = corrupt_pilot(same, none, step);
    CHECK_THAT(conditional_bias_oracle_cv(stepped, truth, {DesignKind::iid_uniform, 10}),
               WithinAbs(0.7 * 0.01, 1e-12));

    const std::vector<double> pts{0.1, 0.9};
    CHECK_THAT(conditional_bias_oracle_cv_at(shifted, truth, pts), WithinAbs(0.01, 1e-15));
}

TEST_CASE("monotone cv oracle is nonnegative") {
    const PropensityModel truth({0.5, 0.1, -0.05});
    Engine rng = make_stream(77, 0);
    for (int t = 0; t < 20; ++t) {
        const PilotRegression p({0.3 + 0.4 * uniform01(rng), 0.3 * (uniform01(rng) - 0.5), 0.2 * (uniform01(rng) - 0.5)},
                                kPilotFold, 0.05);
        CHECK(conditional_bias_oracle_cv(p, truth, {DesignKind::iid_uniform, 1}) >= 0.0);
        CHECK(conditional_bias_oracle_density(PilotDensity({1.0, uniform01(rng) - 0.5}, kPilotFold),
                                              SeriesDensity({1.0, 0.3})) <= 0.0);
    }
}
