#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "quadfun/config.hpp"
#include "quadfun/harness.hpp"

namespace quadfun {

/// 17 significant digits, so the text parses back to the same double. Always
/// carries a decimal point or exponent.
inline std::string format_real(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    if (v == 0.0) {
        return "0.0";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string text(buf);
    // Keep reals distinguishable from integer columns.
    if (text.find_first_of(".e") == std::string::npos) {
        text += ".0";
    }
    return text;
}

inline double parse_real(const std::string& text) {
    if (text == "nan") {
        return std::numeric_limits<double>::quiet_NaN();
    }
    if (text == "inf") {
        return std::numeric_limits<double>::infinity();
    }
    if (text == "-inf") {
        return -std::numeric_limits<double>::infinity();
    }
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) {
        throw std::invalid_argument("not a number: '" + text + "'");
    }
    return v;
}

inline std::string format_cell(const Cell& c) {
    if (const auto* i = std::get_if<std::int64_t>(&c)) {
        return std::to_string(*i);
    }
    if (const auto* d = std::get_if<double>(&c)) {
        return format_real(*d);
    }
    return std::get<std::string>(c);
}

inline void write_csv(std::ostream& out, const Table& table) {
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
        out << (c ? "," : "") << table.columns[c];
    }
    out << '\n';
    for (const auto& row : table.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            out << (c ? "," : "") << format_cell(row[c]);
        }
        out << '\n';
    }
}

namespace output_detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
        fields.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        fields.emplace_back();
    }
    return fields;
}

inline bool is_integer(const std::string& s) {
    if (s.empty()) {
        return false;
    }
    std::size_t i = s[0] == '-' ? 1 : 0;
    if (i == s.size()) {
        return false;
    }
    for (; i < s.size(); ++i) {
        if (s[i] < '0' || s[i] > '9') {
            return false;
        }
    }
    return true;
}

}  // namespace output_detail

/// Reads a CSV written by write_csv. Integer-looking fields become integers,
/// other numeric fields reals, anything else text.
inline Table read_csv(std::istream& in) {
    Table table;
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("empty CSV");
    }
    table.columns = output_detail::split_csv_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto fields = output_detail::split_csv_line(line);
        if (fields.size() != table.columns.size()) {
            throw std::runtime_error("CSV row with " + std::to_string(fields.size()) + " fields, expected " +
                                     std::to_string(table.columns.size()));
        }
        std::vector<Cell> row;
        for (const auto& f : fields) {
            if (output_detail::is_integer(f)) {
                row.emplace_back(static_cast<std::int64_t>(std::stoll(f)));
                continue;
            }
            try {
                row.emplace_back(parse_real(f));
            } catch (const std::invalid_argument&) {
                row.emplace_back(f);
            }
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

inline nlohmann::ordered_json metric_json(const Metric& m) {
    auto real = [](double v) -> nlohmann::ordered_json {
        if (std::isfinite(v)) {
            return v;
        }
        return format_real(v);
    };
    return {{"mean", real(m.mean)}, {"mc_se", real(m.mc_se)}, {"count", m.count},
            {"min", real(m.min)}, {"max", real(m.max)}};
}

inline Metric metric_from_json(const nlohmann::json& j) {
    auto real = [](const nlohmann::json& v) {
        return v.is_string() ? parse_real(v.get<std::string>()) : v.get<double>();
    };
    Metric m;
    m.mean = real(j.at("mean"));
    m.mc_se = real(j.at("mc_se"));
    m.count = j.at("count").get<std::size_t>();
    m.min = real(j.at("min"));
    m.max = real(j.at("max"));
    return m;
}

/// JSON mirror of the summary. Non-finite reals are written as strings.
inline std::string summary_json(const ExperimentResult& result) {
    nlohmann::ordered_json root;
    root["kind"] = to_string(result.config.kind);
    root["seed"] = result.config.seed;
    root["reps"] = result.config.reps;
    root["records"] = result.records.rows.size();
    nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
    for (const auto& [name, m] : result.summary.metrics) {
        metrics[name] = metric_json(m);
    }
    root["metrics"] = std::move(metrics);
    if (!result.power_curve.empty()) {
        nlohmann::ordered_json curve = nlohmann::ordered_json::array();
        for (const auto& p : result.power_curve) {
            curve.push_back({{"multiple", p.multiple},
                             {"corruption", p.corruption},
                             {"bias_k", p.bias_k},
                             {"threshold", p.threshold},
                             {"rejection_rate", metric_json(p.rejection)}});
        }
        root["power_curve"] = std::move(curve);
    }
    root["config"] = normalized_config(result.config);
    return root.dump(2) + "\n";
}

struct SummaryFile {
    std::string kind;
    std::uint64_t seed = 0;
    std::size_t reps = 0;
    std::size_t records = 0;
    MetricsSummary summary;
};

inline SummaryFile read_summary(std::istream& in) {
    const auto root = nlohmann::json::parse(in);
    SummaryFile out;
    out.kind = root.at("kind").get<std::string>();
    out.seed = root.at("seed").get<std::uint64_t>();
    out.reps = root.at("reps").get<std::size_t>();
    out.records = root.at("records").get<std::size_t>();
    for (const auto& [name, m] : root.at("metrics").items()) {
        out.summary.metrics[name] = metric_from_json(m);
    }
    return out;
}

inline Table power_curve_table(const std::vector<PowerPoint>& curve) {
    Table t;
    t.columns = {"multiple", "corruption", "bias_k", "threshold", "rejection_rate", "mc_se"};
    for (const auto& p : curve) {
        t.rows.push_back({p.multiple, p.corruption, p.bias_k, p.threshold, p.rejection.mean, p.rejection.mc_se});
    }
    return t;
}

}  // namespace quadfun
