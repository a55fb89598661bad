#pragma once

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "twostage/sweep.hpp"
#include "twostage/text.hpp"

namespace twostage {

using ConfigEcho = std::vector<std::pair<std::string, std::string>>;

inline constexpr std::string_view kResultsHeader =
    "policy,n,rho,theta,n1,cov,seed,mrt_seconds,normalized_mrt,ci_half_width";

namespace detail {

inline std::string opt_field(const std::optional<double>& v) {
    return v ? text::format_double(*v) : std::string();
}

inline std::optional<double> opt_double(std::string_view s, std::size_t line, const char* what) {
    if (text::trim(s).empty())
        return std::nullopt;
    auto v = text::parse_double(s);
    if (!v)
        throw std::runtime_error("results line " + std::to_string(line) + ": malformed " + what);
    return v;
}

} // namespace detail

inline void write_echo(std::ostream& out, const ConfigEcho& echo) {
    for (const auto& [k, v] : echo)
        out << "# " << k << '=' << v << '\n';
}

inline void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows, const ConfigEcho& echo) {
    write_echo(out, echo);
    out << kResultsHeader << '\n';
    for (const auto& r : rows) {
        out << r.policy << ',' << r.n << ',' << text::format_double(r.rho) << ','
            << detail::opt_field(r.theta) << ',' << (r.n1 ? std::to_string(*r.n1) : std::string())
            << ',' << detail::opt_field(r.cov) << ',' << r.seed << ','
            << text::format_double(r.mrt_seconds) << ',' << detail::opt_field(r.normalized_mrt) << ','
            << detail::opt_field(r.ci_half_width) << '\n';
    }
}

inline std::vector<ResultRow> read_results_csv(std::istream& in) {
    std::vector<ResultRow> rows;
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        const auto view = text::trim(line);
        if (view.empty() || view.front() == '#')
            continue;
        if (!header) {
            if (view != kResultsHeader)
                throw std::runtime_error("results line " + std::to_string(lineno) + ": unexpected header");
            header = true;
            continue;
        }
        const auto f = text::split(view, ',');
        if (f.size() != 10)
            throw std::runtime_error("results line " + std::to_string(lineno) + ": expected 10 fields");
        ResultRow r;
        r.policy = std::string(text::trim(f[0]));
        auto n = text::parse_int<int>(f[1]);
        auto rho = text::parse_double(f[2]);
        auto seed = text::parse_int<std::uint64_t>(f[6]);
        auto mrt = text::parse_double(f[7]);
        if (!n || !rho || !seed || !mrt)
            throw std::runtime_error("results line " + std::to_string(lineno) + ": malformed row");
        r.n = *n;
        r.rho = *rho;
        r.theta = detail::opt_double(f[3], lineno, "theta");
        if (!text::trim(f[4]).empty()) {
            auto n1 = text::parse_int<int>(f[4]);
            if (!n1)
                throw std::runtime_error("results line " + std::to_string(lineno) + ": malformed n1");
            r.n1 = *n1;
        }
        r.cov = detail::opt_double(f[5], lineno, "cov");
        r.seed = *seed;
        r.mrt_seconds = *mrt;
        r.normalized_mrt = detail::opt_double(f[8], lineno, "normalized_mrt");
        r.ci_half_width = detail::opt_double(f[9], lineno, "ci_half_width");
        rows.push_back(std::move(r));
    }
    if (!header)
        throw std::runtime_error("results file has no header");
    return rows;
}

inline nlohmann::ordered_json row_to_json(const ResultRow& r) {
    nlohmann::ordered_json j;
    auto opt = [](const auto& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr); };
    j["policy"] = r.policy;
    j["n"] = r.n;
    j["rho"] = r.rho;
    j["theta"] = opt(r.theta);
    j["theta_quantile"] = opt(r.theta_quantile);
    j["n1"] = opt(r.n1);
    j["cov"] = opt(r.cov);
    j["seed"] = r.seed;
    j["mrt_seconds"] = r.mrt_seconds;
    j["mrt_hours"] = r.mrt_seconds / 3600.0;
    j["normalized_mrt"] = opt(r.normalized_mrt);
    j["normalized"] = r.normalized_mrt.has_value();
    j["ci_half_width"] = opt(r.ci_half_width);
    return j;
}

inline nlohmann::ordered_json results_json(const std::vector<ResultRow>& rows, const ConfigEcho& echo) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    for (const auto& [k, v] : echo)
        config[k] = v;
    j["config"] = config;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rows)
        j["rows"].push_back(row_to_json(r));
    return j;
}

// ---------------------------------------------------------------------------
// Sweep plan files
// ---------------------------------------------------------------------------

inline SweepPlan parse_sweep_plan(const nlohmann::json& j) {
    SweepPlan p;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key))
            j.at(key).get_to(field);
    };
    if (!j.is_object())
        throw std::invalid_argument("sweep plan: expected a JSON object");
    static const std::set<std::string> known{"rho",  "n",        "policies",        "cov",
                                             "trace", "jobs",    "replications",    "seed",
                                             "warmup_fraction", "total_capacity", "two_stage_grid",
                                             "output"};
    for (const auto& [key, _] : j.items())
        if (!known.contains(key))
            throw std::invalid_argument("sweep plan: unknown key '" + key + "'");
    get("rho", p.rho);
    get("n", p.n);
    get("policies", p.policies);
    get("cov", p.cov);
    if (j.contains("trace"))
        p.trace = j.at("trace").get<std::string>();
    get("jobs", p.jobs);
    get("replications", p.replications);
    get("seed", p.seed);
    get("warmup_fraction", p.warmup_fraction);
    get("total_capacity", p.total_capacity);
    if (j.contains("two_stage_grid")) {
        const auto& g = j.at("two_stage_grid");
        if (g.contains("quantiles"))
            g.at("quantiles").get_to(p.two_stage_grid.quantiles);
        if (g.contains("n1"))
            p.two_stage_grid.n1 = g.at("n1").get<std::vector<int>>();
    }
    if (j.contains("output"))
        p.output = j.at("output").get<std::string>();
    p.validate();
    return p;
}

inline SweepPlan load_sweep_plan(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open plan file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("plan file '" + path + "': " + e.what());
    }
    return parse_sweep_plan(j);
}

inline ConfigEcho plan_echo(const SweepPlan& p) {
    auto join = [](const auto& values) {
        std::string s;
        for (const auto& v : values) {
            if (!s.empty())
                s += ';';
            if constexpr (std::is_same_v<std::decay_t<decltype(v)>, std::string>)
                s += v;
            else if constexpr (std::is_integral_v<std::decay_t<decltype(v)>>)
                s += std::to_string(v);
            else
                s += text::format_double(v);
        }
        return s;
    };
    ConfigEcho e{{"command", "sweep"},
                 {"rho", join(p.rho)},
                 {"n", join(p.n)},
                 {"policies", join(p.policies)}};
    if (p.trace)
        e.emplace_back("trace", *p.trace);
    else
        e.emplace_back("cov", join(p.cov));
    e.emplace_back("jobs", std::to_string(p.jobs));
    e.emplace_back("replications", std::to_string(p.replications));
    e.emplace_back("seed", std::to_string(p.seed));
    e.emplace_back("warmup_fraction", text::format_double(p.warmup_fraction));
    e.emplace_back("total_capacity", text::format_double(p.total_capacity));
    e.emplace_back("theta_quantiles", join(p.two_stage_grid.quantiles));
    if (p.two_stage_grid.n1)
        e.emplace_back("n1_grid", join(*p.two_stage_grid.n1));
    return e;
}

// ---------------------------------------------------------------------------
// Figure tables
// ---------------------------------------------------------------------------

enum class FigureAxis { rho, n };

/// Reshapes per-point summaries into one column per policy, one row per
/// axis value. Cells hold normalized MRT, or MRT in hours when the run was
/// not normalized.
inline std::string figure_table(const std::vector<ResultRow>& summaries, FigureAxis axis) {
    if (summaries.empty())
        throw std::invalid_argument("figure: no results");
    std::set<int> ns;
    std::set<double> rhos;
    std::set<double> covs;
    std::vector<std::string> policies;
    for (const auto& r : summaries) {
        ns.insert(r.n);
        rhos.insert(r.rho);
        covs.insert(r.cov.value_or(-1.0));
        if (std::find(policies.begin(), policies.end(), r.policy) == policies.end())
            policies.push_back(r.policy);
    }
    if (covs.size() > 1)
        throw std::invalid_argument("figure: results mix several cov values");
    if (axis == FigureAxis::rho && ns.size() > 1)
        throw std::invalid_argument("figure: rho-curve needs a single n, results cover " +
                                    std::to_string(ns.size()) + " values of n");
    if (axis == FigureAxis::n && rhos.size() > 1)
        throw std::invalid_argument("figure: n-curve needs a single rho, results cover " +
                                    std::to_string(rhos.size()) + " values of rho");

    std::map<std::pair<double, std::string>, double> cells;
    bool normalized = true;
    for (const auto& r : summaries) {
        const double key = axis == FigureAxis::rho ? r.rho : static_cast<double>(r.n);
        if (!r.normalized_mrt)
            normalized = false;
        cells[{key, r.policy}] = r.normalized_mrt ? *r.normalized_mrt : r.mrt_seconds / 3600.0;
    }

    std::ostringstream out;
    out << "# value=" << (normalized ? "normalized_mrt" : "mrt_hours") << '\n';
    out << (axis == FigureAxis::rho ? "rho" : "n");
    for (const auto& p : policies)
        out << ',' << p;
    out << '\n';
    const std::set<double> keys = [&] {
        std::set<double> k;
        for (const auto& [kp, _] : cells)
            k.insert(kp.first);
        return k;
    }();
    for (double key : keys) {
        out << (axis == FigureAxis::rho ? text::format_double(key) : std::to_string(static_cast<int>(key)));
        for (const auto& p : policies) {
            auto it = cells.find({key, p});
            if (it == cells.end())
                throw std::invalid_argument("figure: missing axis coverage for policy " + p);
            out << ',' << text::format_double(it->second);
        }
        out << '\n';
    }
    return out.str();
}

} // namespace twostage
