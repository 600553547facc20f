#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "catch_amalgamated.hpp"
#include "quadfun/config.hpp"
#include "quadfun/harness.hpp"
#include "quadfun/rng.hpp"
#include "quadfun/stats.hpp"

using namespace quadfun;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

ExperimentConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

ExperimentConfig small_bias_config() {
    ExperimentConfig c;
    c.kind = ExperimentKind::bias_test;
    c.reps = 40;
    c.seed = 99;
    c.truth = {1.0, 0.3};
    c.n = 300;
    c.pilot.deltas = {0.0, 0.1};
    c.k = 3;
    return c;
}

}  // namespace

TEST_CASE("uniform truth with one replication is exact") {
    ExperimentConfig c;
    c.kind = ExperimentKind::coverage;
    c.reps = 1;
    c.truth = {1.0};
    c.n = 50;
    const auto r = run_experiment(c);
    REQUIRE(r.records.rows.size() == 1);
    const auto& t = r.records;
    CHECK(t.number(0, t.column("psi_hat")) == 1.0);
    CHECK(t.number(0, t.column("se")) == 0.0);
    CHECK(t.number(0, t.column("psi_true")) == 1.0);
    CHECK(t.number(0, t.column("covered")) == 1.0);
    CHECK(r.summary.at("coverage").mc_se == 0.0);
    CHECK(r.summary.at("coverage").count == 1);
}

TEST_CASE("mc_se examples") {
    CHECK(mc_se(std::vector<double>{0.0, 0.0, 0.0}) == 0.0);
    CHECK_THAT(mc_se(std::vector<double>{0.0, 1.0}), WithinAbs(0.5, 1e-15));
    Engine rng = make_stream(12, 0);
    std::normal_distribution<double> z;
    std::vector<double> v(10000);
    for (auto& x : v) x = z(rng);
    const double se = mc_se(v);
    CHECK(se >= 0.0095);
    CHECK(se <= 0.0105);
    CHECK(summarize_values(std::vector<double>{3.0}).mc_se == 0.0);
}

TEST_CASE("records are independent of thread count and replication order") {
    for (auto kind : {ExperimentKind::coverage, ExperimentKind::bias_test, ExperimentKind::universal}) {
        ExperimentConfig c = small_bias_config();
        c.kind = kind;
        if (kind == ExperimentKind::coverage) c.k = 0;
        if (kind == ExperimentKind::universal) c.n = 40;
        c.threads = 1;
        const auto one = run_experiment(c);
        c.threads = 4;
        const auto four = run_experiment(c);
        CHECK(one.records.rows == four.records.rows);

        std::vector<std::vector<Cell>> reversed(c.reps);
        for (std::size_t rep = c.reps; rep-- > 0;) {
            reversed[rep] = run_replication(c, rep).front();
        }
        CHECK(reversed == one.records.rows);
    }
}

TEST_CASE("summary aggregates match the records") {
    const auto r = run_experiment(small_bias_config());
    const auto& t = r.records;
    for (const std::string name : {"bias_k_hat", "bias_oracle", "psi_hat", "psi_se"}) {
        std::vector<double> v;
        for (std::size_t i = 0; i < t.rows.size(); ++i) v.push_back(t.number(i, t.column(name)));
        const auto& m = r.summary.at(name);
        CHECK_THAT(m.mean, WithinAbs(mean(v), 1e-12));
        CHECK_THAT(m.mc_se, WithinAbs(sample_sd(v) / std::sqrt(static_cast<double>(v.size())), 1e-12));
        CHECK(m.count == v.size());
    }
    std::vector<double> rejections;
    for (std::size_t i = 0; i < t.rows.size(); ++i) rejections.push_back(t.number(i, t.column("reject")));
    CHECK_THAT(r.summary.at("rejection_rate").mean, WithinAbs(mean(rejections), 1e-12));
}

TEST_CASE("fold partitions") {
    using harness_detail::partition;
    const auto iid = partition(10, 3, DesignKind::iid_uniform);
    CHECK(iid[0] == std::vector<std::size_t>{0, 1, 2});
    CHECK(iid[1] == std::vector<std::size_t>{3, 4, 5});
    CHECK(iid[2] == std::vector<std::size_t>{6, 7, 8, 9});
    const auto grid = partition(7, 2, DesignKind::fixed_grid);
    CHECK(grid[0] == std::vector<std::size_t>{0, 2, 4, 6});
    CHECK(grid[1] == std::vector<std::size_t>{1, 3, 5});
    CHECK_NOTHROW(harness_detail::assert_partition(iid, 10));
    CHECK_THROWS_AS(harness_detail::assert_partition(iid, 11), std::logic_error);
    CHECK_THROWS_AS(harness_detail::assert_partition({{0, 1}, {1}}, 2), std::logic_error);
}

TEST_CASE("a failing replication names itself and the seed") {
    try {
        parallel_reps(20, 3, 4242, [](std::size_t rep) {
            if (rep == 7 || rep == 13) throw std::runtime_error("boom");
        });
        FAIL("expected ReplicationError");
    } catch (const ReplicationError& e) {
        CHECK(e.rep() == 7);
        CHECK_THAT(std::string(e.what()), ContainsSubstring("4242"));
        CHECK_THAT(std::string(e.what()), ContainsSubstring("boom"));
    }
}

TEST_CASE("fixed-grid coverage uses the sample-average estimand by default") {
    ExperimentConfig c;
    c.kind = ExperimentKind::coverage;
    c.reps = 5;
    c.functional = Functional::cond_variance;
    c.truth = {0.5, 0.1};
    c.design = DesignKind::fixed_grid;
    c.n = 100;
    CHECK(c.resolved_estimand() == Estimand::sample_average);
    const auto r = run_experiment(c);
    const auto& t = r.records;
    const auto x = grid_points(100);
    const PropensityModel pi({0.5, 0.1});
    std::vector<double> v;
    for (double xi : x) v.push_back(pi(xi) * (1.0 - pi(xi)));
    CHECK_THAT(t.number(0, t.column("psi_true")), WithinAbs(mean(v), 1e-12));
    CHECK(t.number(0, t.column("bias_oracle")) == 0.0);
}

TEST_CASE("ensemble experiment emits paired rows") {
    ExperimentConfig c;
    c.kind = ExperimentKind::ensemble_test;
    c.reps = 3;
    c.functional = Functional::cond_variance;
    c.truth = {0.5, 0.1};
    c.n = 300;
    c.regressors = {RegressorSpec::knn(10), RegressorSpec::series(3)};
    const auto r = run_experiment(c);
    REQUIRE(r.records.rows.size() == 6);
    const auto& t = r.records;
    CHECK(t.text(0, t.column("basis")) == "estimated");
    CHECK(t.text(1, t.column("basis")) == "cosine");
    CHECK(t.number(0, t.column("k")) == t.number(1, t.column("k")));
    CHECK(t.number(0, t.column("m")) == 2.0);
    CHECK(r.gram_deviation.size() == 3);
    for (double g : r.gram_deviation) CHECK(g < 1e-8);
    CHECK(r.summary.at("estimated.rejection_rate").count == 3);
}

TEST_CASE("config parsing") {
    const auto c = parse(
        "kind = bias_test\nreps = 10\nseed = 3\n\n[scenario]\nfunctional = cond_variance\n"
        "truth = [0.5, 0.1]\nn = 400\n\n[pilot]\nmode = fixed\ncoefficients = [0.4, 0.2]\n"
        "steps = 0.5:0.1\n\n[test]\nk = 4\nbasis = haar\n");
    CHECK(c.kind == ExperimentKind::bias_test);
    CHECK(c.reps == 10);
    CHECK(c.functional == Functional::cond_variance);
    CHECK(c.truth == std::vector<double>{0.5, 0.1});
    CHECK(c.pilot.mode == PilotMode::fixed);
    REQUIRE(c.pilot.steps.size() == 1);
    CHECK(c.pilot.steps[0].at == 0.5);
    CHECK(c.basis == BasisKind::haar);
    CHECK_NOTHROW(validate(c));

    const auto again = parse(normalized_config(c));
    CHECK(normalized_config(again) == normalized_config(c));

    CHECK_THROWS_AS(parse("kind = bias_test\nbogus = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse("[nowhere]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse("[scenario]\nn = many\n"), ConfigError);
    CHECK_THROWS_AS(parse("[scenario]\nfunctional = entropy\n"), ConfigError);
    CHECK_THROWS_AS(parse("kind = nothing\n"), ConfigError);

    ExperimentConfig bad;
    bad.reps = 0;
    CHECK_THROWS_WITH(validate(bad), ContainsSubstring("reps must be >= 1"));
    bad = {};
    bad.truth = {1.0, 2.0};
    CHECK_THROWS_AS(validate(bad), ConfigError);
    bad = {};
    bad.kind = ExperimentKind::bias_test;
    bad.design = DesignKind::fixed_grid;
    bad.functional = Functional::cond_variance;
    bad.truth = {0.5};
    CHECK_THROWS_AS(validate(bad), ConfigError);
    bad = {};
    bad.power_multiples = {1.0};
    CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("power curve crosses the tolerance") {
    ExperimentConfig c = small_bias_config();
    c.reps = 200;
    c.n = 2000;
    c.k = 2;
    c.pilot.deltas.clear();
    c.power_multiples = {0.0, 5.0};
    const auto r = run_experiment(c);
    REQUIRE(r.power_curve.size() == 2);
    CHECK(r.power_curve[0].corruption == 0.0);
    CHECK_THAT(r.power_curve[0].bias_k, WithinAbs(0.0, 1e-12));
    const auto& p = r.power_curve[1];
    CHECK_THAT(p.bias_k, WithinAbs(5.0 * p.threshold, 1e-3 * p.threshold));
    CHECK(p.rejection.mean > r.power_curve[0].rejection.mean);
}
