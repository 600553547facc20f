#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "quadfun/basis.hpp"
#include "quadfun/bias_test.hpp"
#include "quadfun/config.hpp"
#include "quadfun/dgp.hpp"
#include "quadfun/ensemble_basis.hpp"
#include "quadfun/errors.hpp"
#include "quadfun/functionals.hpp"
#include "quadfun/pilots.hpp"
#include "quadfun/rng.hpp"
#include "quadfun/stats.hpp"
#include "quadfun/universal.hpp"

namespace quadfun {

using Cell = std::variant<std::int64_t, double, std::string>;

/// Per-replication records with a fixed column schema.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;

    std::size_t column(const std::string& name) const {
        const auto it = std::find(columns.begin(), columns.end(), name);
        if (it == columns.end()) {
            throw std::out_of_range("no column '" + name + "'");
        }
        return static_cast<std::size_t>(it - columns.begin());
    }

    double number(std::size_t row, std::size_t col) const {
        const Cell& c = rows.at(row).at(col);
        if (const auto* i = std::get_if<std::int64_t>(&c)) {
            return static_cast<double>(*i);
        }
        if (const auto* d = std::get_if<double>(&c)) {
            return *d;
        }
        throw std::invalid_argument("column " + columns.at(col) + " is not numeric");
    }

    const std::string& text(std::size_t row, std::size_t col) const {
        return std::get<std::string>(rows.at(row).at(col));
    }
};

inline const std::vector<std::string>& csv_columns(ExperimentKind kind) {
    static const std::vector<std::string> coverage{"rep", "n", "estimator", "psi_hat", "se",
                                                   "psi_true", "covered", "bias_oracle"};
    static const std::vector<std::string> bias{"rep", "n", "k", "basis", "bias_k_hat", "bias_k_se",
                                               "bias_oracle", "psi_hat", "psi_se", "statistic", "reject"};
    static const std::vector<std::string> ensemble = [] {
        auto c = bias;
        c.insert(c.end(), {"m", "retained", "basis_mode"});
        return c;
    }();
    static const std::vector<std::string> universal{"rep", "n", "B", "alpha", "set_lo", "set_hi", "covered"};
    switch (kind) {
        case ExperimentKind::coverage: return coverage;
        case ExperimentKind::bias_test: return bias;
        case ExperimentKind::ensemble_test: return ensemble;
        case ExperimentKind::universal: return universal;
    }
    throw ConfigError("unknown experiment kind");
}

struct Metric {
    double mean = 0.0;
    double mc_se = 0.0;  // 0 when count < 2
    std::size_t count = 0;
    double min = 0.0;
    double max = 0.0;
};

/// Named Monte Carlo aggregates, ordered by name.
struct MetricsSummary {
    std::map<std::string, Metric> metrics;

    const Metric& at(const std::string& name) const {
        const auto it = metrics.find(name);
        if (it == metrics.end()) {
            throw std::out_of_range("no metric '" + name + "'");
        }
        return it->second;
    }
};

inline Metric summarize_values(std::span<const double> values) {
    Metric m;
    m.count = values.size();
    if (values.empty()) {
        m.mean = m.min = m.max = std::numeric_limits<double>::quiet_NaN();
        return m;
    }
    m.mean = mean(values);
    m.mc_se = values.size() < 2 ? 0.0 : mc_se(values);
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    m.min = *lo;
    m.max = *hi;
    return m;
}

struct PowerPoint {
    double multiple = 0.0;
    double corruption = 0.0;
    double bias_k = 0.0;
    double threshold = 0.0;
    Metric rejection;
};

struct ExperimentResult {
    ExperimentConfig config;
    Table records;
    MetricsSummary summary;
    std::vector<double> gram_deviation;  // ensemble_test: one per replication
    std::vector<PowerPoint> power_curve;
};

/// A replication threw; the run is aborted.
class ReplicationError : public std::runtime_error {
public:
    ReplicationError(std::size_t rep, std::uint64_t seed, const std::string& what)
        : std::runtime_error("replication " + std::to_string(rep) + " (master seed " +
                             std::to_string(seed) + ") failed: " + what),
          rep_(rep) {}

    std::size_t rep() const noexcept { return rep_; }

private:
    std::size_t rep_;
};

namespace harness_detail {

/// Index lists of a fold partition; the last fold is the evaluation fold.
inline std::vector<std::vector<std::size_t>> partition(std::size_t n, std::size_t folds, DesignKind design) {
    std::vector<std::vector<std::size_t>> out(folds);
    if (design == DesignKind::fixed_grid) {
        // Strided folds keep every fold spread over the grid.
        for (std::size_t i = 0; i < n; ++i) {
            out[i % folds].push_back(i);
        }
        return out;
    }
    const std::size_t base = n / folds;
    std::size_t next = 0;
    for (std::size_t f = 0; f < folds; ++f) {
        const std::size_t size = f + 1 == folds ? n - next : base;
        for (std::size_t i = 0; i < size; ++i) {
            out[f].push_back(next++);
        }
    }
    return out;
}

inline void assert_partition(const std::vector<std::vector<std::size_t>>& folds, std::size_t n) {
    std::vector<char> seen(n, 0);
    std::size_t total = 0;
    for (const auto& f : folds) {
        for (std::size_t i : f) {
            if (i >= n || seen[i]) {
                throw std::logic_error("folds do not partition the sample");
            }
            seen[i] = 1;
            ++total;
        }
    }
    if (total != n) {
        throw std::logic_error("folds do not cover the sample");
    }
}

inline std::vector<double> pick(const std::vector<double>& v, const std::vector<std::size_t>& idx) {
    std::vector<double> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) {
        out.push_back(v[i]);
    }
    return out;
}

inline std::vector<double> padded(std::vector<double> v, std::size_t size) {
    if (v.size() < size) {
        v.resize(size, 0.0);
    }
    return v;
}

inline std::size_t fitted_pilots(const ExperimentConfig& c) {
    if (c.kind == ExperimentKind::ensemble_test) {
        return 2;
    }
    std::size_t count = c.pilot.mode == PilotMode::fit ? 1 : 0;
    if (c.kind == ExperimentKind::coverage && c.estimator == EstimatorKind::split &&
        c.pilot2.mode == PilotMode::fit) {
        ++count;
    }
    return count;
}

/// Samples the full dataset and splits it into folds 0..F-1; the evaluation fold is last.
struct DensityFolds {
    std::vector<CovariateSample> folds;
};

inline DensityFolds density_folds(const ExperimentConfig& c, const SeriesDensity& truth, Engine& rng) {
    const std::size_t count = fitted_pilots(c) + 1;
    const auto x = sample_density(truth, c.n, rng);
    const auto parts = partition(c.n, count, c.design);
    assert_partition(parts, c.n);
    DensityFolds out;
    for (std::size_t f = 0; f < count; ++f) {
        out.folds.push_back({FoldId(static_cast<int>(f)), pick(x, parts[f])});
    }
    return out;
}

inline std::vector<PairedSample> cv_folds(const ExperimentConfig& c, const PropensityModel& truth, Engine& rng) {
    const std::size_t count = fitted_pilots(c) + 1;
    const auto data = sample_conditional(Design{c.design, c.n}, truth, rng);
    const auto parts = partition(c.n, count, c.design);
    assert_partition(parts, c.n);
    std::vector<PairedSample> out;
    for (std::size_t f = 0; f < count; ++f) {
        out.push_back({FoldId(static_cast<int>(f)), pick(data.x, parts[f]), pick(data.a, parts[f])});
    }
    return out;
}

inline PilotDensity make_density_pilot(const PilotSpec& spec, const SeriesDensity& truth,
                                       const CovariateSample* aux) {
    std::vector<double> theta;
    FoldId fold = FoldId::external();
    switch (spec.mode) {
        case PilotMode::truth: theta.assign(truth.coefficients().begin(), truth.coefficients().end()); break;
        case PilotMode::fixed: theta = spec.coefficients; break;
        case PilotMode::fit: {
            const auto fit = fit_series_density(*aux, spec.J);
            theta.assign(fit.coefficients().begin(), fit.coefficients().end());
            fold = fit.fold();
            break;
        }
    }
    const PilotDensity base(padded(std::move(theta), spec.deltas.size()), fold);
    return spec.deltas.empty() ? base : corrupt_pilot(base, spec.deltas);
}

inline PilotRegression make_regression_pilot(const PilotSpec& spec, const PropensityModel& truth,
                                             const PairedSample* aux, double clip, double ridge) {
    std::vector<double> coef;
    FoldId fold = FoldId::external();
    switch (spec.mode) {
        case PilotMode::truth: coef.assign(truth.coefficients().begin(), truth.coefficients().end()); break;
        case PilotMode::fixed: coef = spec.coefficients; break;
        case PilotMode::fit: {
            const auto fit = fit_series_regression(*aux, spec.J, ridge, clip);
            coef.assign(fit.coefficients().begin(), fit.coefficients().end());
            fold = fit.fold();
            break;
        }
    }
    const PilotRegression base(padded(std::move(coef), spec.deltas.size()), fold, clip);
    if (spec.deltas.empty() && spec.steps.empty()) {
        return base;
    }
    return corrupt_pilot(base, spec.deltas, spec.steps);
}

inline double covered_interval(double estimate, double se, double truth, double alpha) {
    return std::abs(estimate - truth) <= normal_quantile(1.0 - alpha / 2.0) * se ? 1.0 : 0.0;
}

inline std::int64_t as_int(std::size_t v) { return static_cast<std::int64_t>(v); }

// ---- coverage -------------------------------------------------------------

inline std::vector<std::vector<Cell>> coverage_rep(const ExperimentConfig& c, std::size_t rep, Engine& rng) {
    std::vector<Cell> row;
    const bool split = c.estimator == EstimatorKind::split;
    if (c.functional == Functional::density) {
        const SeriesDensity truth(c.truth, c.p_min);
        const auto data = density_folds(c, truth, rng);
        const auto& main = data.folds.back();
        std::size_t next_aux = 0;
        auto aux_for = [&](const PilotSpec& s) -> const CovariateSample* {
            return s.mode == PilotMode::fit ? &data.folds[next_aux++] : nullptr;
        };
        const auto p1 = make_density_pilot(c.pilot, truth, aux_for(c.pilot));
        const double psi = true_expected_density(truth);
        FunctionalEstimate est;
        double oracle = 0.0;
        if (split) {
            const auto p2 = make_density_pilot(c.pilot2, truth, aux_for(c.pilot2));
            est = split_expected_density(p1, p2, main);
            oracle = conditional_bias_oracle_density(p1, p2, truth);
        } else if (c.estimator == EstimatorKind::plugin) {
            est = plugin_expected_density(p1);
            est.n = main.x.size();
            oracle = est.value - psi;
        } else {
            est = first_order_expected_density(p1, main);
            oracle = conditional_bias_oracle_density(p1, truth);
        }
        return {{as_int(rep), as_int(est.n), to_string(c.estimator), est.value, est.se, psi,
                 static_cast<std::int64_t>(covered_interval(est.value, est.se, psi, c.alpha)), oracle}};
    }

    const PropensityModel truth(c.truth, c.clip);
    const auto folds = cv_folds(c, truth, rng);
    const auto& main = folds.back();
    std::size_t next_aux = 0;
    auto aux_for = [&](const PilotSpec& s) -> const PairedSample* {
        return s.mode == PilotMode::fit ? &folds[next_aux++] : nullptr;
    };
    const auto p1 = make_regression_pilot(c.pilot, truth, aux_for(c.pilot), c.clip, c.ridge);
    std::optional<PilotRegression> p2;
    if (split) {
        p2 = make_regression_pilot(c.pilot2, truth, aux_for(c.pilot2), c.clip, c.ridge);
    }
    const FunctionalEstimate est = split ? split_cond_variance(p1, *p2, main) : first_order_cond_variance(p1, main);

    auto var = [&](double x) {
        const double p = truth(x);
        return p * (1.0 - p);
    };
    const Estimand estimand = c.resolved_estimand();
    double psi = 0.0;
    double oracle = 0.0;
    if (estimand == Estimand::sample_average) {
        psi = detail::average_over(main.x, var);
        oracle = split ? conditional_bias_oracle_cv_at(p1, *p2, truth, main.x)
                       : conditional_bias_oracle_cv_at(p1, truth, main.x);
    } else {
        psi = true_expected_cond_variance(truth, Design{DesignKind::iid_uniform, main.size()});
        if (c.design == DesignKind::iid_uniform) {
            const Design design{DesignKind::iid_uniform, main.size()};
            oracle = split ? conditional_bias_oracle_cv(p1, *p2, truth, design)
                           : conditional_bias_oracle_cv(p1, truth, design);
        } else {
            // Fixed covariates, population target: grid-average bias plus the grid's
            // departure from the population estimand.
            oracle = (split ? conditional_bias_oracle_cv_at(p1, *p2, truth, main.x)
                            : conditional_bias_oracle_cv_at(p1, truth, main.x)) +
                     detail::average_over(main.x, var) - psi;
        }
    }
    return {{as_int(rep), as_int(est.n), to_string(c.estimator), est.value, est.se, psi,
             static_cast<std::int64_t>(covered_interval(est.value, est.se, psi, c.alpha)), oracle}};
}

// ---- bias test ------------------------------------------------------------

/// Coefficients of f in `basis` from a shared tabulation of the basis on quadrature nodes.
template <FunctionSystem B>
class BasisTabulation {
public:
    BasisTabulation(const B& basis, std::size_t k, std::span<const double> cuts)
        : rule_(piecewise_simpson_rule(cuts)), k_(k), values_(rule_.size() * k) {
        for (std::size_t i = 0; i < rule_.size(); ++i) {
            basis.values(rule_[i].x, std::span<double>(values_.data() + i * k, k));
        }
    }

    template <class F>
    std::vector<double> coefficients(F&& f) const {
        std::vector<double> coef(k_, 0.0);
        for (std::size_t i = 0; i < rule_.size(); ++i) {
            const double w = rule_[i].weight * f(rule_[i].x);
            for (std::size_t j = 0; j < k_; ++j) {
                coef[j] += w * values_[i * k_ + j];
            }
        }
        return coef;
    }

private:
    std::vector<QuadratureNode> rule_;
    std::size_t k_;
    std::vector<double> values_;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double total = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        total += (a[j] - b[j]) * (a[j] - b[j]);
    }
    return total;
}

struct BiasRow {
    BiasTestReport report;
    double oracle = 0.0;
    double psi_hat = 0.0;
};

template <FunctionSystem B>
BiasRow cv_bias_row(const PilotRegression& pilot, const PropensityModel& truth, const PairedSample& test,
                    const B& basis, std::size_t k, const ExperimentConfig& c) {
    std::vector<double> cuts = basis_cuts(basis, k);
    const auto steps = pilot.breakpoints();
    cuts.insert(cuts.end(), steps.begin(), steps.end());
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    const BasisTabulation<B> tab(basis, k, cuts);
    const auto a = tab.coefficients([&](double x) { return pilot(x); });
    const auto b = tab.coefficients([&](double x) { return truth(x); });

    const auto psi = first_order_cond_variance(pilot, test);
    require_independent(pilot.fold(), test.fold, "pilot and evaluation sample");
    const QuadraticBiasInputs inputs{a, detail::basis_features(basis, k, test.x, test.a)};
    const auto bias = estimate_from_inputs(inputs, k, basis.id());
    return {test_bias(bias, psi.se, c.delta, c.alpha), squared_distance(a, b), psi.value};
}

inline std::vector<Cell> bias_cells(std::size_t rep, const BiasRow& r) {
    const auto& b = r.report.bias_estimate;
    return {as_int(rep), as_int(b.n), as_int(b.k), b.basis_id, b.value, b.se, r.oracle,
            r.psi_hat, r.report.psi_se, r.report.statistic, std::int64_t{r.report.reject ? 1 : 0}};
}

inline std::size_t projection_dimension(const ExperimentConfig& c, std::size_t n_test) {
    return c.k > 0 ? c.k : default_projection_dimension(n_test);
}

inline std::vector<std::vector<Cell>> bias_rep(const ExperimentConfig& c, std::size_t rep, Engine& rng) {
    if (c.functional == Functional::density) {
        const SeriesDensity truth(c.truth, c.p_min);
        const auto data = density_folds(c, truth, rng);
        const auto& main = data.folds.back();
        const auto pilot = make_density_pilot(c.pilot, truth, c.pilot.mode == PilotMode::fit ? &data.folds[0] : nullptr);
        const std::size_t k = projection_dimension(c, main.x.size());
        const FixedBasis basis(c.basis, k);
        const auto psi = first_order_expected_density(pilot, main);
        const auto bias = estimate_bias_k_density(pilot, main, basis, k);
        const BiasRow row{test_bias(bias, psi.se, c.delta, c.alpha),
                          projected_bias_density(pilot, truth, basis, k), psi.value};
        return {bias_cells(rep, row)};
    }
    const PropensityModel truth(c.truth, c.clip);
    const auto folds = cv_folds(c, truth, rng);
    const auto& test = folds.back();
    const auto pilot = make_regression_pilot(c.pilot, truth, c.pilot.mode == PilotMode::fit ? &folds[0] : nullptr,
                                             c.clip, c.ridge);
    const std::size_t k = projection_dimension(c, test.size());
    const FixedBasis basis(c.basis, k);
    return {bias_cells(rep, cv_bias_row(pilot, truth, test, basis, k, c))};
}

// ---- ensemble -------------------------------------------------------------

struct EnsembleRep {
    std::vector<std::vector<Cell>> rows;
    double gram_deviation = 0.0;
};

inline EnsembleRep ensemble_rep(const ExperimentConfig& c, std::size_t rep, Engine& rng) {
    const PropensityModel truth(c.truth, c.clip);
    const auto folds = cv_folds(c, truth, rng);  // pilot / ensemble / test
    const auto& ens_fold = folds[1];
    const auto& test = folds[2];
    const auto pilot = make_regression_pilot(c.pilot, truth, &folds[0], c.clip, c.ridge);

    const auto ensemble = fit_ensemble(c.regressors, ens_fold, pilot);
    std::optional<FixedPrefix> prefix;
    if (c.concat_fixed > 0) {
        prefix = FixedPrefix{FixedBasis(BasisKind::cosine, c.concat_fixed), c.concat_fixed};
    }
    const CovariateSample inner{c.basis_mode == BasisMode::test_fold ? test.fold : ens_fold.fold,
                                c.basis_mode == BasisMode::test_fold ? test.x : ens_fold.x};
    const auto basis = build_estimated_basis(ensemble, inner, prefix, c.drop_tol, c.basis_mode);
    const std::size_t k = c.k > 0 ? std::min(c.k, basis.size()) : basis.size();

    EnsembleRep out;
    out.gram_deviation = gram_deviation(basis);
    auto extend = [&](std::vector<Cell> cells) {
        cells.push_back(as_int(c.regressors.size()));
        cells.push_back(as_int(basis.size()));
        cells.push_back(to_string(c.basis_mode));
        return cells;
    };
    out.rows.push_back(extend(bias_cells(rep, cv_bias_row(pilot, truth, test, basis, k, c))));
    const FixedBasis fixed(BasisKind::cosine, k);
    out.rows.push_back(extend(bias_cells(rep, cv_bias_row(pilot, truth, test, fixed, k, c))));
    return out;
}

// ---- universal ------------------------------------------------------------

inline std::function<double(double)> universal_target(const std::string& name) {
    if (name == "square") {
        return [](double t) { return t * t; };
    }
    if (name == "cos") {
        return [](double t) { return std::cos(t); };
    }
    return [](double t) { return t; };
}

inline std::vector<std::vector<Cell>> universal_rep(const ExperimentConfig& c, std::size_t rep, Engine& rng) {
    const auto data = sample_mixture(c.theta_star, c.n, rng);
    const std::uint64_t split_seed = derive_seed(derive_seed(c.seed, rep), 1);
    const SplitLikelihoodRatio lrt(data, c.universal, split_seed);
    const double threshold = -std::log(c.universal.alpha);
    double lo = 0.0;
    double hi = 0.0;
    bool covered = false;
    if (c.target == "identity") {
        const auto set = confidence_set(lrt);
        lo = set.lo;
        hi = set.hi;
        covered = lrt.log_tbar(c.theta_star) <= threshold;
    } else {
        const auto f = universal_target(c.target);
        const ProfileLikelihoodRatio profile(lrt, f);
        const auto set = profile.set();
        lo = set.lo;
        hi = set.hi;
        covered = std::min(lrt.log_tbar(c.theta_star), profile.log_profile(f(c.theta_star))) <= threshold;
    }
    return {{as_int(rep), as_int(c.n), as_int(c.universal.B), c.universal.alpha, lo, hi,
             std::int64_t{covered ? 1 : 0}}};
}

// ---- aggregation ----------------------------------------------------------

inline std::vector<double> column_values(const Table& t, const std::string& name,
                                         const std::function<bool(std::size_t)>& keep = {}) {
    const std::size_t col = t.column(name);
    std::vector<double> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (!keep || keep(r)) {
            out.push_back(t.number(r, col));
        }
    }
    return out;
}

inline void add_bias_metrics(MetricsSummary& s, const Table& t, const std::string& prefix,
                             const std::function<bool(std::size_t)>& keep, double alpha) {
    const auto hat = column_values(t, "bias_k_hat", keep);
    const auto se = column_values(t, "bias_k_se", keep);
    const auto oracle = column_values(t, "bias_oracle", keep);
    std::vector<double> error(hat.size());
    std::vector<double> ci_cover(hat.size());
    const double z = normal_quantile(1.0 - alpha / 2.0);
    for (std::size_t i = 0; i < hat.size(); ++i) {
        error[i] = hat[i] - oracle[i];
        ci_cover[i] = std::abs(hat[i] - oracle[i]) <= z * se[i] ? 1.0 : 0.0;
    }
    s.metrics[prefix + "bias_k_hat"] = summarize_values(hat);
    s.metrics[prefix + "bias_k_se"] = summarize_values(se);
    s.metrics[prefix + "bias_oracle"] = summarize_values(oracle);
    s.metrics[prefix + "bias_k_error"] = summarize_values(error);
    s.metrics[prefix + "bias_ci_coverage"] = summarize_values(ci_cover);
    s.metrics[prefix + "psi_hat"] = summarize_values(column_values(t, "psi_hat", keep));
    s.metrics[prefix + "psi_se"] = summarize_values(column_values(t, "psi_se", keep));
    s.metrics[prefix + "rejection_rate"] = summarize_values(column_values(t, "reject", keep));
    s.metrics[prefix + "k"] = summarize_values(column_values(t, "k", keep));
}

}  // namespace harness_detail

/// Aggregates the per-replication records of `kind`.
inline MetricsSummary summarize(ExperimentKind kind, const Table& t, double alpha) {
    using namespace harness_detail;
    MetricsSummary s;
    switch (kind) {
        case ExperimentKind::coverage: {
            const auto psi_hat = column_values(t, "psi_hat");
            const auto psi_true = column_values(t, "psi_true");
            const auto se = column_values(t, "se");
            std::vector<double> error(psi_hat.size());
            std::vector<double> width(psi_hat.size());
            const double z = normal_quantile(1.0 - alpha / 2.0);
            for (std::size_t i = 0; i < psi_hat.size(); ++i) {
                error[i] = psi_hat[i] - psi_true[i];
                width[i] = 2.0 * z * se[i];
            }
            s.metrics["psi_hat"] = summarize_values(psi_hat);
            s.metrics["psi_true"] = summarize_values(psi_true);
            s.metrics["se"] = summarize_values(se);
            s.metrics["error"] = summarize_values(error);
            s.metrics["bias_oracle"] = summarize_values(column_values(t, "bias_oracle"));
            s.metrics["coverage"] = summarize_values(column_values(t, "covered"));
            s.metrics["ci_width"] = summarize_values(width);
            break;
        }
        case ExperimentKind::bias_test:
            add_bias_metrics(s, t, "", {}, alpha);
            break;
        case ExperimentKind::ensemble_test: {
            const std::size_t basis_col = t.column("basis");
            for (const std::string group : {"estimated", "cosine"}) {
                add_bias_metrics(s, t, group + ".",
                                 [&](std::size_t r) { return t.text(r, basis_col) == group; }, alpha);
            }
            s.metrics["retained"] = summarize_values(
                column_values(t, "retained", [&](std::size_t r) { return t.text(r, basis_col) == "estimated"; }));
            break;
        }
        case ExperimentKind::universal: {
            const auto lo = column_values(t, "set_lo");
            const auto hi = column_values(t, "set_hi");
            std::vector<double> width;
            std::vector<double> empty(lo.size());
            for (std::size_t i = 0; i < lo.size(); ++i) {
                empty[i] = std::isnan(lo[i]) ? 1.0 : 0.0;
                if (!std::isnan(lo[i])) {
                    width.push_back(hi[i] - lo[i]);
                }
            }
            s.metrics["coverage"] = summarize_values(column_values(t, "covered"));
            s.metrics["set_width"] = summarize_values(width);
            s.metrics["empty_rate"] = summarize_values(empty);
            break;
        }
    }
    return s;
}

/// Runs body(rep) for rep in [0, reps) on `threads` workers. The first failing
/// replication (lowest index) aborts the run.
inline void parallel_reps(std::size_t reps, std::size_t threads, std::uint64_t seed,
                          const std::function<void(std::size_t)>& body) {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::mutex failure_mutex;
    std::optional<std::size_t> failed_rep;
    std::string failure;
    auto worker = [&] {
        while (!stop.load()) {
            const std::size_t rep = next.fetch_add(1);
            if (rep >= reps) {
                return;
            }
            try {
                body(rep);
            } catch (const std::exception& e) {
                const std::lock_guard lock(failure_mutex);
                if (!failed_rep || rep < *failed_rep) {
                    failed_rep = rep;
                    failure = e.what();
                }
                stop.store(true);
            }
        }
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, reps));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(worker);
        }
    }
    if (failed_rep) {
        throw ReplicationError(*failed_rep, seed, failure);
    }
}

/// Runs one replication; its output depends only on (config, rep).
inline std::vector<std::vector<Cell>> run_replication(const ExperimentConfig& c, std::size_t rep,
                                                      double* gram_deviation = nullptr) {
    Engine rng = make_stream(c.seed, rep);
    switch (c.kind) {
        case ExperimentKind::coverage: return harness_detail::coverage_rep(c, rep, rng);
        case ExperimentKind::bias_test: return harness_detail::bias_rep(c, rep, rng);
        case ExperimentKind::ensemble_test: {
            auto out = harness_detail::ensemble_rep(c, rep, rng);
            if (gram_deviation) {
                *gram_deviation = out.gram_deviation;
            }
            return std::move(out.rows);
        }
        case ExperimentKind::universal: return harness_detail::universal_rep(c, rep, rng);
    }
    throw ConfigError("unknown experiment kind");
}

inline std::vector<PowerPoint> run_power_curve(const ExperimentConfig& config);

/// Validates the config, runs every replication and aggregates.
inline ExperimentResult run_experiment(const ExperimentConfig& config) {
    validate(config);
    ExperimentResult result;
    result.config = config;
    std::vector<std::vector<std::vector<Cell>>> per_rep(config.reps);
    std::vector<double> gram(config.reps, 0.0);
    parallel_reps(config.reps, config.threads, config.seed,
                  [&](std::size_t rep) { per_rep[rep] = run_replication(config, rep, &gram[rep]); });
    result.records.columns = csv_columns(config.kind);
    for (auto& rows : per_rep) {
        for (auto& row : rows) {
            result.records.rows.push_back(std::move(row));
        }
    }
    const double alpha = config.kind == ExperimentKind::universal ? config.universal.alpha : config.alpha;
    result.summary = summarize(config.kind, result.records, alpha);
    if (config.kind == ExperimentKind::ensemble_test) {
        result.gram_deviation = std::move(gram);
        result.summary.metrics["gram_deviation"] = summarize_values(result.gram_deviation);
    }
    if (!config.power_multiples.empty()) {
        result.power_curve = run_power_curve(config);
    }
    return result;
}

namespace harness_detail {

/// Population sd of the first-order influence values under the truth, divided by sqrt(n).
inline double theoretical_psi_se(const ExperimentConfig& c, const std::vector<double>& pilot_coef,
                                 std::size_t n_main) {
    const double root_n = std::sqrt(static_cast<double>(n_main));
    if (c.functional == Functional::density) {
        const SeriesDensity truth(c.truth, c.p_min);
        const double m1 = simpson([&](double x) { return cosine_series(pilot_coef, x) * truth(x); }, 0.0, 1.0);
        const double m2 = simpson([&](double x) {
            const double v = cosine_series(pilot_coef, x);
            return v * v * truth(x);
        }, 0.0, 1.0);
        return 2.0 * std::sqrt(std::max(0.0, m2 - m1 * m1)) / root_n;
    }
    const PropensityModel truth(c.truth, c.clip);
    const PilotRegression pilot(pilot_coef, FoldId::external(), c.clip);
    auto moment = [&](int power) {
        return simpson([&](double x) {
            const double p = truth(x);
            const double q = pilot(x);
            return p * std::pow(1.0 - q, power) + (1.0 - p) * std::pow(q, power);
        }, 0.0, 1.0);
    };
    const double m2 = moment(2);
    return std::sqrt(std::max(0.0, moment(4) - m2 * m2)) / root_n;
}

}  // namespace harness_detail

/// Rejection rate against a pilot corrupted along phi_2 so that Bias_k equals
/// multiple * delta * se(psi_hat), for each configured multiple.
inline std::vector<PowerPoint> run_power_curve(const ExperimentConfig& config) {
    using namespace harness_detail;
    if (config.pilot.mode == PilotMode::fit) {
        throw ConfigError("power curves need a truth or fixed pilot");
    }
    const std::size_t k = projection_dimension(config, config.n);
    if (k < 2) {
        throw ConfigError("power curves perturb phi_2 and need k >= 2");
    }
    std::vector<double> base = config.pilot.mode == PilotMode::truth ? config.truth : config.pilot.coefficients;
    base = padded(std::move(base), std::max<std::size_t>(2, config.pilot.deltas.size()));
    for (std::size_t j = 0; j < config.pilot.deltas.size(); ++j) {
        base[j] += config.pilot.deltas[j];
    }
    std::vector<PowerPoint> curve;
    for (double multiple : config.power_multiples) {
        // Fixed point of c = sqrt(multiple * delta * se(c)).
        double c = 0.0;
        for (int it = 0; it < 50; ++it) {
            auto coef = base;
            coef[1] += c;
            const double next = std::sqrt(multiple * config.delta * theoretical_psi_se(config, coef, config.n));
            if (std::abs(next - c) < 1e-12) {
                c = next;
                break;
            }
            c = next;
        }
        ExperimentConfig run = config;
        run.power_multiples.clear();
        run.pilot.mode = PilotMode::fixed;
        run.pilot.coefficients = base;
        run.pilot.coefficients[1] += c;
        run.pilot.deltas.clear();
        const auto result = run_experiment(run);
        PowerPoint point;
        point.multiple = multiple;
        point.corruption = c;
        point.bias_k = result.summary.at("bias_oracle").mean;
        auto coef = base;
        coef[1] += c;
        point.threshold = config.delta * theoretical_psi_se(config, coef, config.n);
        point.rejection = result.summary.at("rejection_rate");
        curve.push_back(point);
    }
    return curve;
}

}  // namespace quadfun
