#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "grid.hpp"
#include "model.hpp"
#include "simulate.hpp"

namespace fraclqr {

/// Parameter sweep: one model field and the values it takes.
struct SweepSpec {
    std::string parameter = "alpha";
    std::vector<double> values{0.6, 0.75, 0.9, 1.0};

    bool operator==(const SweepSpec&) const = default;
};

struct VerifySpec {
    int levels = 3;          // refinement levels n / 2^(levels-1), ..., n
    int perturbations = 20;  // cost-dominance bumps; 0 skips the experiment
    std::vector<double> epsilons{-0.1, -0.05, 0.05, 0.1};

    bool operator==(const VerifySpec&) const = default;
};

struct RunConfig {
    LqModel model;
    std::optional<double> horizon; // default_horizon(model, mu) when absent
    int n = 512;
    std::optional<double> mu;
    bool allow_outside_contraction = false;
    DriftRule drift_rule = DriftRule::trapezoid;
    int n_paths = 1000;
    std::uint64_t base_seed = 1;
    std::string outputs = "out";
    std::string control = "optimal"; // optimal | zero
    SweepSpec sweep;
    VerifySpec verify;

    bool operator==(const RunConfig&) const = default;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                           const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("unknown key '" + where + it.key() + "'");
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("key '" + where + key + "': " + e.what());
    }
}

inline std::string rule_name(DriftRule r) {
    return r == DriftRule::trapezoid ? "trapezoid" : "left_point";
}

inline DriftRule parse_rule(const std::string& s) {
    if (s == "trapezoid") return DriftRule::trapezoid;
    if (s == "left_point") return DriftRule::left_point;
    throw ConfigError("key 'run.drift_rule': expected trapezoid or left_point, got '" + s + "'");
}

} // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
    using nlohmann::json;
    const LqModel& m = c.model;
    json j = {{"x0", m.x0},       {"b", m.b},         {"c", m.c},         {"sigma", m.sigma},
              {"gamma", m.gamma}, {"alpha", m.alpha}, {"delta", m.delta}, {"lambda", m.lambda}};
    if (c.mu) j["mu"] = *c.mu;
    j["allow_outside_contraction"] = c.allow_outside_contraction;
    j["grid"] = {{"n", c.n}};
    if (c.horizon) j["grid"]["horizon"] = *c.horizon;
    j["run"] = {{"n_paths", c.n_paths},
                {"base_seed", c.base_seed},
                {"outputs", c.outputs},
                {"control", c.control},
                {"drift_rule", detail::rule_name(c.drift_rule)},
                {"sweep", {{"parameter", c.sweep.parameter}, {"values", c.sweep.values}}},
                {"verify",
                 {{"levels", c.verify.levels},
                  {"perturbations", c.verify.perturbations},
                  {"epsilons", c.verify.epsilons}}}};
    return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    using detail::read;
    detail::reject_unknown(j,
                           {"x0", "b", "c", "sigma", "gamma", "alpha", "delta", "lambda", "mu",
                            "allow_outside_contraction", "grid", "run"},
                           "");
    RunConfig c;
    LqModel& m = c.model;
    read(j, "x0", m.x0, "");
    read(j, "b", m.b, "");
    read(j, "c", m.c, "");
    read(j, "sigma", m.sigma, "");
    read(j, "gamma", m.gamma, "");
    read(j, "alpha", m.alpha, "");
    read(j, "delta", m.delta, "");
    read(j, "lambda", m.lambda, "");
    if (j.contains("mu")) {
        double mu = 0.0;
        read(j, "mu", mu, "");
        c.mu = mu;
    }
    read(j, "allow_outside_contraction", c.allow_outside_contraction, "");
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        detail::reject_unknown(g, {"n", "horizon"}, "grid.");
        read(g, "n", c.n, "grid.");
        if (g.contains("horizon")) {
            double T = 0.0;
            read(g, "horizon", T, "grid.");
            c.horizon = T;
        }
    }
    if (j.contains("run")) {
        const auto& r = j.at("run");
        detail::reject_unknown(r,
                               {"n_paths", "base_seed", "outputs", "control", "drift_rule", "sweep",
                                "verify"},
                               "run.");
        read(r, "n_paths", c.n_paths, "run.");
        read(r, "base_seed", c.base_seed, "run.");
        read(r, "outputs", c.outputs, "run.");
        read(r, "control", c.control, "run.");
        std::string rule = detail::rule_name(c.drift_rule);
        read(r, "drift_rule", rule, "run.");
        c.drift_rule = detail::parse_rule(rule);
        if (r.contains("sweep")) {
            const auto& s = r.at("sweep");
            detail::reject_unknown(s, {"parameter", "values"}, "run.sweep.");
            read(s, "parameter", c.sweep.parameter, "run.sweep.");
            read(s, "values", c.sweep.values, "run.sweep.");
        }
        if (r.contains("verify")) {
            const auto& v = r.at("verify");
            detail::reject_unknown(v, {"levels", "perturbations", "epsilons"}, "run.verify.");
            read(v, "levels", c.verify.levels, "run.verify.");
            read(v, "perturbations", c.verify.perturbations, "run.verify.");
            read(v, "epsilons", c.verify.epsilons, "run.verify.");
        }
    }
    if (c.control != "optimal" && c.control != "zero")
        throw ConfigError("key 'run.control': expected optimal or zero, got '" + c.control + "'");
    if (c.n < 2) throw ConfigError("key 'grid.n': need at least 2 cells");
    if (c.n_paths < 1) throw ConfigError("key 'run.n_paths': need at least 1 path");
    if (c.verify.levels < 1) throw ConfigError("key 'run.verify.levels': need at least 1 level");
    if (c.verify.perturbations < 0) throw ConfigError("key 'run.verify.perturbations': negative");
    return c;
}

/// Parses a JSON document; syntax errors carry the line and column.
inline RunConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t k = 0; k + 1 < e.byte && k < text.size(); ++k) {
            if (text[k] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError("config parse error at line " + std::to_string(line) + ", column " +
                          std::to_string(col) + ": " + e.what());
    }
    return config_from_json(j);
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Float formatting at 17 significant digits, enough to reload every double bit for bit.
inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/**
 * CSV table: header row, data rows, then '#'-prefixed provenance lines (resolved config,
 * admissibility constants and, unless suppressed, a timestamp).
 */
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> columns) : columns_(std::move(columns)) {}

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != columns_.size()) throw std::logic_error("CSV row width mismatch");
        rows_.push_back(cells);
    }
    void row(const std::vector<double>& cells) {
        std::vector<std::string> s;
        for (double v : cells) s.push_back(fmt17(v));
        row(s);
    }
    void note(const std::string& line) { notes_.push_back(line); }

    std::string str() const {
        std::string out;
        auto line = [&out](const std::vector<std::string>& cells) {
            for (std::size_t k = 0; k < cells.size(); ++k) {
                if (k) out += ',';
                out += cells[k];
            }
            out += '\n';
        };
        line(columns_);
        for (const auto& r : rows_) line(r);
        for (const auto& n : notes_) out += "# " + n + "\n";
        return out;
    }

    void write(const std::filesystem::path& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw Error("cannot write " + path.string());
        f << str();
    }

private:
    std::vector<std::string> columns_;
    std::vector<std::vector<std::string>> rows_;
    std::vector<std::string> notes_;
};

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace fraclqr
