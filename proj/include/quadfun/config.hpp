#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "quadfun/basis.hpp"
#include "quadfun/bias_test.hpp"
#include "quadfun/dgp.hpp"
#include "quadfun/ensemble_basis.hpp"
#include "quadfun/errors.hpp"
#include "quadfun/functionals.hpp"
#include "quadfun/pilots.hpp"
#include "quadfun/regressors.hpp"
#include "quadfun/text.hpp"
#include "quadfun/universal.hpp"

namespace quadfun {

enum class ExperimentKind { coverage, bias_test, ensemble_test, universal };
enum class Functional { density, cond_variance };
enum class Estimand { population, sample_average };
enum class PilotMode { truth, fixed, fit };

inline std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::coverage: return "coverage";
        case ExperimentKind::bias_test: return "bias_test";
        case ExperimentKind::ensemble_test: return "ensemble_test";
        case ExperimentKind::universal: return "universal";
    }
    return "unknown";
}
inline std::string to_string(Functional f) {
    return f == Functional::density ? "density" : "cond_variance";
}
inline std::string to_string(Estimand e) {
    return e == Estimand::population ? "population" : "sample_average";
}
inline std::string to_string(PilotMode m) {
    switch (m) {
        case PilotMode::truth: return "truth";
        case PilotMode::fixed: return "fixed";
        case PilotMode::fit: return "fit";
    }
    return "unknown";
}

/// How a nuisance pilot is produced in each replication.
struct PilotSpec {
    PilotMode mode = PilotMode::truth;
    std::vector<double> coefficients;     // fixed mode
    std::size_t J = 3;                    // fit mode
    std::vector<double> deltas;           // corruption added after construction
    std::vector<StepPerturbation> steps;  // cond_variance pilots only
};

/// Declarative description of one Monte Carlo experiment.
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::coverage;
    std::size_t reps = 1000;
    std::uint64_t seed = 1;
    std::size_t threads = 1;

    // [scenario]
    Functional functional = Functional::density;
    std::vector<double> truth{1.0};  // density theta, or propensity coefficients
    double p_min = kDefaultPositivityMargin;
    double clip = kDefaultClip;
    DesignKind design = DesignKind::iid_uniform;
    std::optional<Estimand> estimand;  // defaults by design
    std::size_t n = 200;
    EstimatorKind estimator = EstimatorKind::first_order;
    double ridge = 1e-8;

    PilotSpec pilot;
    PilotSpec pilot2;

    // [test]
    std::size_t k = 0;  // 0: floor(n_test^(1/3))
    BasisKind basis = BasisKind::cosine;
    double delta = kDefaultBiasTolerance;
    double alpha = 0.05;
    std::vector<double> power_multiples;

    // [ensemble]
    std::vector<RegressorSpec> regressors = default_regressor_menu();
    BasisMode basis_mode = BasisMode::test_fold;
    std::size_t concat_fixed = 0;
    double drop_tol = kDefaultDropTolerance;

    // [universal]
    double theta_star = 1.0;
    UniversalConfig universal;
    std::string target = "identity";  // identity | square | cos

    Estimand resolved_estimand() const {
        if (estimand) {
            return *estimand;
        }
        return design == DesignKind::fixed_grid ? Estimand::sample_average : Estimand::population;
    }
};

namespace detail {

inline std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    s = s.substr(first, last - first + 1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
        s = s.substr(1, s.size() - 2);
    }
    return s;
}

// "1, 0.3" or "[1, 0.3]"
inline std::vector<std::string> split_list(std::string text) {
    text = trim(text);
    if (!text.empty() && text.front() == '[') {
        if (text.back() != ']') {
            throw ConfigError("unterminated list '" + text + "'");
        }
        text = text.substr(1, text.size() - 2);
    }
    std::vector<std::string> items;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            items.push_back(item);
        }
    }
    return items;
}

inline double parse_double(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size() || !std::isfinite(v)) {
            throw std::invalid_argument(text);
        }
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError(key + ": expected a finite number, got '" + text + "'");
    }
}

inline std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
    try {
        if (text.empty() || text.front() == '-') {
            throw std::invalid_argument(text);
        }
        std::size_t used = 0;
        const unsigned long long v = std::stoull(text, &used, 10);
        if (used != text.size()) {
            throw std::invalid_argument(text);
        }
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError(key + ": expected a nonnegative integer, got '" + text + "'");
    }
}

inline std::vector<double> parse_doubles(const std::string& key, const std::string& text) {
    std::vector<double> out;
    for (const auto& item : split_list(text)) {
        out.push_back(parse_double(key, item));
    }
    return out;
}

inline std::string format_double(double v) { return shortest_text(v); }

inline std::string join_doubles(const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out += (i ? ", " : "") + format_double(values[i]);
    }
    return out;
}

template <class Enum>
Enum parse_enum(const std::string& key, const std::string& text,
                std::initializer_list<std::pair<const char*, Enum>> choices) {
    std::string allowed;
    for (const auto& [name, value] : choices) {
        if (text == name) {
            return value;
        }
        allowed += (allowed.empty() ? "" : "|") + std::string(name);
    }
    throw ConfigError(key + ": expected one of " + allowed + ", got '" + text + "'");
}

inline ExperimentKind parse_kind(const std::string& key, const std::string& text) {
    return parse_enum<ExperimentKind>(key, text,
                                      {{"coverage", ExperimentKind::coverage},
                                       {"bias_test", ExperimentKind::bias_test},
                                       {"ensemble_test", ExperimentKind::ensemble_test},
                                       {"universal", ExperimentKind::universal}});
}

/// Raw value with any trailing `# comment` removed.
inline std::string value_text(const std::string& raw) {
    return trim(raw.substr(0, raw.find('#')));
}

class SectionReader {
public:
    SectionReader(const boost::property_tree::ptree& tree, std::string section)
        : tree_(tree), section_(std::move(section)) {}

    std::optional<std::string> get(const std::string& key) {
        seen_.insert(key);
        const auto v = tree_.get_optional<std::string>(boost::property_tree::ptree::path_type(key, '\0'));
        if (!v) {
            return std::nullopt;
        }
        return value_text(*v);
    }

    std::string name(const std::string& key) const {
        return section_.empty() ? key : section_ + "." + key;
    }

    void reject_unknown() const {
        for (const auto& [key, child] : tree_) {
            if (!child.empty()) {
                continue;  // a section; checked by the caller
            }
            if (!seen_.count(key)) {
                throw ConfigError("unknown key '" + name(key) + "'");
            }
        }
    }

private:
    const boost::property_tree::ptree& tree_;
    std::string section_;
    std::set<std::string> seen_;
};

inline PilotSpec read_pilot(const boost::property_tree::ptree& root, const std::string& section) {
    PilotSpec spec;
    const auto child = root.get_child_optional(boost::property_tree::ptree::path_type(section, '\0'));
    if (!child) {
        return spec;
    }
    SectionReader r(*child, section);
    if (auto v = r.get("mode")) {
        spec.mode = parse_enum<PilotMode>(r.name("mode"), *v,
                                          {{"truth", PilotMode::truth},
                                           {"fixed", PilotMode::fixed},
                                           {"fit", PilotMode::fit}});
    }
    if (auto v = r.get("coefficients")) spec.coefficients = parse_doubles(r.name("coefficients"), *v);
    if (auto v = r.get("J")) spec.J = parse_unsigned(r.name("J"), *v);
    if (auto v = r.get("deltas")) spec.deltas = parse_doubles(r.name("deltas"), *v);
    if (auto v = r.get("steps")) {
        for (const auto& item : split_list(*v)) {
            const auto colon = item.find(':');
            if (colon == std::string::npos) {
                throw ConfigError(r.name("steps") + ": expected at:height pairs, got '" + item + "'");
            }
            spec.steps.push_back({parse_double(r.name("steps"), trim(item.substr(0, colon))),
                                  parse_double(r.name("steps"), trim(item.substr(colon + 1)))});
        }
    }
    r.reject_unknown();
    return spec;
}

}  // namespace detail

/// Checks every cross-field constraint. Throws ConfigError naming the violation.
inline void validate(const ExperimentConfig& c) {
    auto fail = [](const std::string& what) { throw ConfigError(what); };
    if (c.reps < 1) fail("reps must be >= 1");
    if (c.threads < 1) fail("threads must be >= 1");
    if (!(c.alpha > 0.0 && c.alpha < 1.0)) fail("test.alpha must lie in (0, 1)");
    if (!(c.delta >= 0.0)) fail("test.delta must be >= 0");
    if (!(c.drop_tol > 0.0 && c.drop_tol < 1.0)) fail("ensemble.drop_tol must lie in (0, 1)");
    if (!(c.ridge >= 0.0)) fail("scenario.ridge must be >= 0");

    if (c.kind == ExperimentKind::universal) {
        c.universal.validate();
        if (c.n < 2) fail("scenario.n must be >= 2 for universal inference");
        if (c.theta_star < c.universal.grid.lo || c.theta_star > c.universal.grid.hi) {
            fail("universal.theta_star must lie inside the theta grid");
        }
        if (c.target != "identity" && c.target != "square" && c.target != "cos") {
            fail("universal.target must be identity|square|cos");
        }
        return;
    }

    if (c.truth.empty()) fail("scenario.truth must list at least one coefficient");
    if (c.functional == Functional::density) {
        if (c.truth[0] != 1.0) fail("scenario.truth must start with 1 for a density");
        try {
            SeriesDensity check(c.truth, c.p_min);
        } catch (const DomainError& e) {
            fail(std::string("scenario.truth: ") + e.what());
        }
        if (c.design != DesignKind::iid_uniform) fail("scenario.design must be iid_uniform for the density functional");
    } else {
        try {
            PropensityModel check(c.truth, c.clip);
        } catch (const DomainError& e) {
            fail(std::string("scenario: ") + e.what());
        }
        if (c.estimator == EstimatorKind::plugin) fail("scenario.estimator plugin applies to the density functional only");
    }
    for (const PilotSpec* p : {&c.pilot, &c.pilot2}) {
        if (p->mode == PilotMode::fixed && p->coefficients.empty()) fail("pilot.coefficients required for mode = fixed");
        if (p->mode == PilotMode::fit && p->J < 1) fail("pilot.J must be >= 1");
        if (!p->steps.empty() && c.functional == Functional::density) fail("pilot.steps apply to cond_variance pilots only");
    }
    if (c.kind == ExperimentKind::bias_test || c.kind == ExperimentKind::ensemble_test) {
        if (c.estimator != EstimatorKind::first_order) fail("bias tests audit the first_order estimator; set scenario.estimator = first_order");
        if (c.design != DesignKind::iid_uniform) fail("bias tests assume iid uniform covariates (scenario.design = iid_uniform)");
    }
    if (c.kind == ExperimentKind::ensemble_test) {
        if (c.functional != Functional::cond_variance) fail("ensemble_test runs on the cond_variance functional");
        if (c.regressors.empty()) fail("ensemble.regressors must list at least one regressor");
        for (const auto& r : c.regressors) r.validate();
        if (c.n < 9) fail("scenario.n must be >= 9 for the three-fold ensemble protocol");
    }
    if (c.kind == ExperimentKind::coverage && c.n < 2) fail("scenario.n must be >= 2");
    if (c.kind == ExperimentKind::bias_test && c.n < 4) fail("scenario.n must be >= 4 for bias tests");
    if (!c.power_multiples.empty()) {
        if (c.kind != ExperimentKind::bias_test) fail("test.power_multiples apply to bias_test only");
        for (double m : c.power_multiples) {
            if (!(m >= 0.0)) fail("test.power_multiples must be >= 0");
        }
    }
}

/// Parses the sectioned key = value format. Unknown keys are errors.
inline ExperimentConfig parse_config(std::istream& in) {
    boost::property_tree::ptree root;
    try {
        boost::property_tree::ini_parser::read_ini(in, root);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    using detail::parse_double;
    using detail::parse_enum;
    using detail::parse_unsigned;

    ExperimentConfig c;
    detail::SectionReader top(root, "");
    if (auto v = top.get("kind")) c.kind = detail::parse_kind("kind", *v);
    if (auto v = top.get("reps")) c.reps = parse_unsigned("reps", *v);
    if (auto v = top.get("seed")) c.seed = parse_unsigned("seed", *v);
    if (auto v = top.get("threads")) c.threads = parse_unsigned("threads", *v);
    top.reject_unknown();

    static const std::set<std::string> sections{"scenario", "pilot", "pilot2", "test", "ensemble", "universal"};
    for (const auto& [key, child] : root) {
        if (!child.empty() && !sections.count(key)) {
            throw ConfigError("unknown section [" + key + "]");
        }
    }

    auto section = [&](const std::string& name) -> const boost::property_tree::ptree& {
        static const boost::property_tree::ptree empty;
        const auto child = root.get_child_optional(boost::property_tree::ptree::path_type(name, '\0'));
        return child ? *child : empty;
    };

    {
        detail::SectionReader r(section("scenario"), "scenario");
        if (auto v = r.get("functional"))
            c.functional = parse_enum<Functional>(r.name("functional"), *v,
                                                  {{"density", Functional::density},
                                                   {"cond_variance", Functional::cond_variance}});
        if (auto v = r.get("truth")) c.truth = detail::parse_doubles(r.name("truth"), *v);
        if (auto v = r.get("p_min")) c.p_min = parse_double(r.name("p_min"), *v);
        if (auto v = r.get("clip")) c.clip = parse_double(r.name("clip"), *v);
        if (auto v = r.get("design"))
            c.design = parse_enum<DesignKind>(r.name("design"), *v,
                                              {{"iid_uniform", DesignKind::iid_uniform},
                                               {"fixed_grid", DesignKind::fixed_grid}});
        if (auto v = r.get("estimand"))
            c.estimand = parse_enum<Estimand>(r.name("estimand"), *v,
                                              {{"population", Estimand::population},
                                               {"sample_average", Estimand::sample_average}});
        if (auto v = r.get("n")) c.n = parse_unsigned(r.name("n"), *v);
        if (auto v = r.get("estimator"))
            c.estimator = parse_enum<EstimatorKind>(r.name("estimator"), *v,
                                                    {{"plugin", EstimatorKind::plugin},
                                                     {"first_order", EstimatorKind::first_order},
                                                     {"split", EstimatorKind::split}});
        if (auto v = r.get("ridge")) c.ridge = parse_double(r.name("ridge"), *v);
        r.reject_unknown();
    }
    c.pilot = detail::read_pilot(root, "pilot");
    c.pilot2 = detail::read_pilot(root, "pilot2");
    {
        detail::SectionReader r(section("test"), "test");
        if (auto v = r.get("k")) c.k = parse_unsigned(r.name("k"), *v);
        if (auto v = r.get("basis"))
            c.basis = parse_enum<BasisKind>(r.name("basis"), *v,
                                            {{"cosine", BasisKind::cosine}, {"haar", BasisKind::haar}});
        if (auto v = r.get("delta")) c.delta = parse_double(r.name("delta"), *v);
        if (auto v = r.get("alpha")) c.alpha = parse_double(r.name("alpha"), *v);
        if (auto v = r.get("power_multiples")) c.power_multiples = detail::parse_doubles(r.name("power_multiples"), *v);
        r.reject_unknown();
    }
    {
        detail::SectionReader r(section("ensemble"), "ensemble");
        if (auto v = r.get("regressors")) {
            c.regressors.clear();
            for (const auto& item : detail::split_list(*v)) {
                c.regressors.push_back(parse_regressor_spec(item));
            }
        }
        if (auto v = r.get("basis_mode"))
            c.basis_mode = parse_enum<BasisMode>(r.name("basis_mode"), *v,
                                                 {{"test", BasisMode::test_fold}, {"aux", BasisMode::aux_fold}});
        if (auto v = r.get("concat_fixed")) c.concat_fixed = parse_unsigned(r.name("concat_fixed"), *v);
        if (auto v = r.get("drop_tol")) c.drop_tol = parse_double(r.name("drop_tol"), *v);
        r.reject_unknown();
    }
    {
        detail::SectionReader r(section("universal"), "universal");
        if (auto v = r.get("theta_star")) c.theta_star = parse_double(r.name("theta_star"), *v);
        if (auto v = r.get("B")) c.universal.B = parse_unsigned(r.name("B"), *v);
        if (auto v = r.get("alpha")) c.universal.alpha = parse_double(r.name("alpha"), *v);
        if (auto v = r.get("grid_lo")) c.universal.grid.lo = parse_double(r.name("grid_lo"), *v);
        if (auto v = r.get("grid_hi")) c.universal.grid.hi = parse_double(r.name("grid_hi"), *v);
        if (auto v = r.get("grid_step")) c.universal.grid.step = parse_double(r.name("grid_step"), *v);
        if (auto v = r.get("estimator"))
            c.universal.estimator = parse_enum<ThetaEstimator>(r.name("estimator"), *v,
                                                               {{"moment", ThetaEstimator::moment},
                                                                {"grid_mle", ThetaEstimator::grid_mle}});
        if (auto v = r.get("target")) c.target = *v;
        r.reject_unknown();
    }
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    return parse_config(in);
}

namespace detail {

inline void write_pilot(std::ostream& out, const std::string& section, const PilotSpec& p) {
    out << "\n[" << section << "]\n";
    out << "mode = " << to_string(p.mode) << "\n";
    out << "coefficients = " << join_doubles(p.coefficients) << "\n";
    out << "J = " << p.J << "\n";
    out << "deltas = " << join_doubles(p.deltas) << "\n";
    out << "steps = ";
    for (std::size_t i = 0; i < p.steps.size(); ++i) {
        out << (i ? ", " : "") << format_double(p.steps[i].at) << ":" << format_double(p.steps[i].height);
    }
    out << "\n";
}

}  // namespace detail

/// Canonical text form with every field spelled out; parses back to the same config.
inline std::string normalized_config(const ExperimentConfig& c) {
    using detail::format_double;
    using detail::join_doubles;
    std::ostringstream out;
    out << "kind = " << to_string(c.kind) << "\n";
    out << "reps = " << c.reps << "\n";
    out << "seed = " << c.seed << "\n";
    out << "threads = " << c.threads << "\n";
    out << "\n[scenario]\n";
    out << "functional = " << to_string(c.functional) << "\n";
    out << "truth = " << join_doubles(c.truth) << "\n";
    out << "p_min = " << format_double(c.p_min) << "\n";
    out << "clip = " << format_double(c.clip) << "\n";
    out << "design = " << to_string(c.design) << "\n";
    out << "estimand = " << to_string(c.resolved_estimand()) << "\n";
    out << "n = " << c.n << "\n";
    out << "estimator = " << to_string(c.estimator) << "\n";
    out << "ridge = " << format_double(c.ridge) << "\n";
    detail::write_pilot(out, "pilot", c.pilot);
    detail::write_pilot(out, "pilot2", c.pilot2);
    out << "\n[test]\n";
    out << "k = " << c.k << "\n";
    out << "basis = " << to_string(c.basis) << "\n";
    out << "delta = " << format_double(c.delta) << "\n";
    out << "alpha = " << format_double(c.alpha) << "\n";
    out << "power_multiples = " << join_doubles(c.power_multiples) << "\n";
    out << "\n[ensemble]\nregressors = ";
    for (std::size_t i = 0; i < c.regressors.size(); ++i) {
        out << (i ? ", " : "") << c.regressors[i].label();
    }
    out << "\n";
    out << "basis_mode = " << to_string(c.basis_mode) << "\n";
    out << "concat_fixed = " << c.concat_fixed << "\n";
    out << "drop_tol = " << format_double(c.drop_tol) << "\n";
    out << "\n[universal]\n";
    out << "theta_star = " << format_double(c.theta_star) << "\n";
    out << "B = " << c.universal.B << "\n";
    out << "alpha = " << format_double(c.universal.alpha) << "\n";
    out << "grid_lo = " << format_double(c.universal.grid.lo) << "\n";
    out << "grid_hi = " << format_double(c.universal.grid.hi) << "\n";
    out << "grid_step = " << format_double(c.universal.grid.step) << "\n";
    out << "estimator = " << to_string(c.universal.estimator) << "\n";
    out << "target = " << c.target << "\n";
    return out.str();
}

}  // namespace quadfun
