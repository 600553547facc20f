// quadfun: run quadratic-functional Monte Carlo experiments from a config file.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "CLI11.hpp"
#include "quadfun/quadfun.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> reps;
    std::optional<std::size_t> threads;
    std::string out = ".";
    std::string format = "both";
};

std::optional<std::string> declared_kind(const std::string& path) {
    boost::property_tree::ptree root;
    try {
        boost::property_tree::ini_parser::read_ini(path, root);
    } catch (const boost::property_tree::ini_parser_error&) {
        return std::nullopt;  // load_config reports the parse error
    }
    const auto v = root.get_optional<std::string>(boost::property_tree::ptree::path_type("kind", '\0'));
    if (!v) {
        return std::nullopt;
    }
    return quadfun::detail::value_text(*v);
}

quadfun::ExperimentConfig resolve(const Options& opt, std::optional<quadfun::ExperimentKind> kind) {
    quadfun::ExperimentConfig config;
    if (!opt.config.empty()) {
        config = quadfun::load_config(opt.config);
        if (kind) {
            const auto declared = declared_kind(opt.config);
            if (declared && *declared != quadfun::to_string(*kind)) {
                throw quadfun::ConfigError("config declares kind = " + *declared + " but the subcommand runs " +
                                           quadfun::to_string(*kind));
            }
        }
    }
    if (kind) config.kind = *kind;
    if (opt.seed) config.seed = *opt.seed;
    if (opt.reps) config.reps = *opt.reps;
    if (opt.threads) config.threads = *opt.threads;
    quadfun::validate(config);
    return config;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

int run(const Options& opt, quadfun::ExperimentKind kind) {
    const auto config = resolve(opt, kind);
    const auto result = quadfun::run_experiment(config);
    const std::filesystem::path dir(opt.out);
    std::filesystem::create_directories(dir);
    if (opt.format != "json") {
        std::ostringstream csv;
        quadfun::write_csv(csv, result.records);
        write_file(dir / (quadfun::to_string(kind) + ".csv"), csv.str());
        if (!result.power_curve.empty()) {
            std::ostringstream curve;
            quadfun::write_csv(curve, quadfun::power_curve_table(result.power_curve));
            write_file(dir / "power_curve.csv", curve.str());
        }
    }
    if (opt.format != "csv") {
        write_file(dir / "summary.json", quadfun::summary_json(result));
    }
    for (const auto& [name, m] : result.summary.metrics) {
        std::cout << name << " = " << quadfun::format_real(m.mean) << " (mc_se " << quadfun::format_real(m.mc_se)
                  << ", n " << m.count << ")\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monte Carlo experiments for quadratic functionals"};
    app.require_subcommand(1);
    Options opt;
    app.add_option("--config", opt.config, "experiment config file")->check(CLI::ExistingFile);
    app.add_option("--seed", opt.seed, "master seed (overrides the config)");
    app.add_option("--reps", opt.reps, "replications (overrides the config)");
    app.add_option("--threads", opt.threads, "worker threads (overrides the config)");
    app.add_option("--out", opt.out, "output directory")->capture_default_str();
    app.add_option("--format", opt.format, "csv|json|both")
        ->check(CLI::IsMember({"csv", "json", "both"}))
        ->capture_default_str();

    using quadfun::ExperimentKind;
    std::optional<ExperimentKind> kind;
    bool validate_only = false;
    const std::pair<const char*, ExperimentKind> runners[] = {
        {"coverage", ExperimentKind::coverage},
        {"bias-test", ExperimentKind::bias_test},
        {"ensemble-test", ExperimentKind::ensemble_test},
        {"universal", ExperimentKind::universal},
    };
    for (const auto& [name, k] : runners) {
        auto* sub = app.add_subcommand(name, "run a " + quadfun::to_string(k) + " experiment");
        sub->fallthrough();
        sub->callback([&kind, k = k] { kind = k; });
    }
    auto* check = app.add_subcommand("validate-config", "check a config and print its normalized form");
    check->fallthrough();
    check->callback([&] { validate_only = true; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e, std::cerr, std::cerr);
        std::cerr << app.help();
        return kExitConfig;
    }

    try {
        if (validate_only) {
            if (opt.config.empty()) {
                throw quadfun::ConfigError("validate-config needs --config");
            }
            std::cout << quadfun::normalized_config(resolve(opt, std::nullopt));
            return kExitOk;
        }
        return run(opt, *kind);
    } catch (const quadfun::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
