#pragma once

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "twostage/analysis.hpp"
#include "twostage/engine.hpp"
#include "twostage/metrics.hpp"
#include "twostage/policies.hpp"
#include "twostage/report.hpp"
#include "twostage/sweep.hpp"
#include "twostage/workload.hpp"

namespace twostage::cli {

inline constexpr const char* kVersion = "0.1.0";

/// A user-facing error reported as a single `error: <kind>: <message>` line.
class CliError : public std::runtime_error {
public:
    CliError(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}
    [[nodiscard]] const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

namespace detail {

inline std::string one_line(std::string s) {
    for (auto& c : s)
        if (c == '\n' || c == '\r')
            c = ' ';
    while (!s.empty() && s.back() == ' ')
        s.pop_back();
    return s;
}

inline void check_rho(double rho) {
    if (!(rho > 0.0 && rho < 1.0))
        throw CliError("usage", "--rho must lie in (0, 1) for a stable system, got " + text::format_double(rho));
}

inline void check_positive(double v, const char* flag) {
    if (!(v > 0.0))
        throw CliError("usage", std::string(flag) + " must be positive");
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw CliError("io", "cannot write '" + path + "'");
    return out;
}

inline void write_file(const std::string& path, const std::string& content) {
    auto out = open_out(path);
    out << content;
}

inline std::shared_ptr<const Workload> load_trace(const std::string& path) {
    try {
        return std::make_shared<Workload>(ingest_trace(path));
    } catch (const TraceError& e) {
        throw CliError("trace", e.what());
    } catch (const std::exception& e) {
        throw CliError("io", e.what());
    }
}

inline nlohmann::ordered_json thresholds_json(const CardThresholds& th) {
    nlohmann::ordered_json j;
    j["m"] = th.m;
    j["c"] = th.c;
    j["band_loads"] = th.band_loads;
    j["approximate"] = th.approximate;
    return j;
}

} // namespace detail

/// Parses argv and runs the selected subcommand. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
    CLI::App app{"Dispatching simulator for single- and two-stage FCFS server clusters", "twostage"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    // fit-weibull ------------------------------------------------------------
    double fit_mean = 1.0;
    double fit_cov = 1.0;
    auto* fit = app.add_subcommand("fit-weibull", "Weibull scale/shape from mean and COV");
    fit->add_option("--mean", fit_mean, "Mean job size")->capture_default_str();
    fit->add_option("--cov", fit_cov, "Coefficient of variation")->required();

    // gen-workload -----------------------------------------------------------
    double gen_rho = 0.8;
    double gen_cov = 1.0;
    double gen_mean = 1.0;
    double gen_capacity = 1.0;
    std::size_t gen_jobs = 100000;
    std::uint64_t gen_seed = 1;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-workload", "Poisson/Weibull workload as canonical trace CSV");
    gen->add_option("--rho", gen_rho, "Target utilization (arrival rate = rho * capacity / mean)")->required();
    gen->add_option("--cov", gen_cov, "Job size COV")->required();
    gen->add_option("--mean", gen_mean, "Mean job size")->capture_default_str();
    gen->add_option("--capacity", gen_capacity, "Total cluster capacity")->capture_default_str();
    gen->add_option("--jobs", gen_jobs, "Number of jobs")->capture_default_str();
    gen->add_option("--seed", gen_seed, "Base seed (replication 0 stream is used)")->capture_default_str();
    gen->add_option("--out", gen_out, "Output CSV path")->required();

    // ingest-trace -----------------------------------------------------------
    std::string ing_path;
    std::optional<int> ing_n;
    std::optional<double> ing_rho;
    std::string ing_out;
    auto* ing = app.add_subcommand("ingest-trace", "Validate a trace and print its statistics");
    ing->add_option("--trace", ing_path, "Canonical trace CSV")->required();
    ing->add_option("--n", ing_n, "Servers (with --rho: print calibrated speed)");
    ing->add_option("--rho", ing_rho, "Target utilization");
    ing->add_option("--out", ing_out, "Re-emit the trace in canonical order");

    // card-thresholds --------------------------------------------------------
    int card_n = 10;
    double card_rho = 0.8;
    std::optional<double> card_cov;
    double card_mean = 1.0;
    std::string card_trace;
    std::string card_out;
    auto* card = app.add_subcommand("card-thresholds", "CARD size and work thresholds as JSON");
    card->add_option("--n", card_n, "Servers")->required();
    card->add_option("--rho", card_rho, "Utilization")->required();
    auto* card_cov_opt = card->add_option("--cov", card_cov, "Weibull job size COV");
    card->add_option("--mean", card_mean, "Weibull mean size")->capture_default_str();
    auto* card_trace_opt = card->add_option("--trace", card_trace, "Use the task-size law of a trace");
    card_cov_opt->excludes(card_trace_opt);
    card->add_option("--out", card_out, "Write JSON here instead of stdout");

    // simulate ---------------------------------------------------------------
    std::string sim_policy = "rr";
    int sim_n = 10;
    double sim_rho = 0.8;
    std::optional<double> sim_cov;
    std::string sim_trace;
    std::size_t sim_jobs = 2'000'000;
    std::uint64_t sim_seed = 1;
    std::size_t sim_reps = 1;
    double sim_warmup = 0.1;
    std::optional<double> sim_theta;
    std::optional<double> sim_theta_q;
    std::optional<int> sim_n1;
    std::string sim_out;
    std::string sim_log;
    auto* sim = app.add_subcommand("simulate", "Simulate one configuration");
    sim->add_option("--policy", sim_policy, "rr | jiq | lwl | card | two_stage:<inner>[,n1=..][,theta=..|,theta_q=..]")
        ->capture_default_str();
    sim->add_option("--n", sim_n, "Servers")->capture_default_str();
    sim->add_option("--rho", sim_rho, "Utilization")->capture_default_str();
    auto* sim_cov_opt = sim->add_option("--cov", sim_cov, "Synthetic Weibull job size COV");
    auto* sim_trace_opt = sim->add_option("--trace", sim_trace, "Canonical trace CSV");
    sim_cov_opt->excludes(sim_trace_opt);
    sim->add_option("--jobs", sim_jobs, "Synthetic jobs per replication")->capture_default_str();
    sim->add_option("--seed", sim_seed, "Base seed")->capture_default_str();
    sim->add_option("--replications", sim_reps, "Independent replications")->capture_default_str();
    sim->add_option("--warmup", sim_warmup, "Fraction of jobs excluded as warm-up")->capture_default_str();
    sim->add_option("--theta", sim_theta, "Two-stage size threshold");
    sim->add_option("--theta-quantile", sim_theta_q, "Two-stage threshold as a size quantile");
    sim->add_option("--n1", sim_n1, "Two-stage first-stage size");
    sim->add_option("--out", sim_out, "Write <out>.csv and <out>.json");
    sim->add_option("--task-log", sim_log, "Per-task completion log CSV (replication 0)");

    // sweep ------------------------------------------------------------------
    std::string sweep_plan;
    std::string sweep_out;
    auto* sweep = app.add_subcommand("sweep", "Run a JSON sweep plan");
    sweep->add_option("--plan", sweep_plan, "Plan file")->required();
    sweep->add_option("--out", sweep_out, "Output prefix (overrides the plan's output)");

    // optimize-two-stage -----------------------------------------------------
    std::string opt_inner = "rr";
    int opt_n = 10;
    double opt_rho = 0.8;
    std::optional<double> opt_cov;
    std::string opt_trace;
    std::size_t opt_jobs = 2'000'000;
    std::uint64_t opt_seed = 1;
    std::size_t opt_reps = 1;
    double opt_warmup = 0.1;
    std::vector<double> opt_quantiles = default_theta_quantiles();
    std::vector<int> opt_n1s;
    std::string opt_out;
    auto* optim = app.add_subcommand("optimize-two-stage", "Grid-search theta and n1 for a two-stage policy");
    optim->add_option("--inner", opt_inner, "rr | jiq | lwl")->capture_default_str();
    optim->add_option("--n", opt_n, "Servers")->capture_default_str();
    optim->add_option("--rho", opt_rho, "Utilization")->capture_default_str();
    auto* opt_cov_opt = optim->add_option("--cov", opt_cov, "Synthetic Weibull job size COV");
    auto* opt_trace_opt = optim->add_option("--trace", opt_trace, "Canonical trace CSV");
    opt_cov_opt->excludes(opt_trace_opt);
    optim->add_option("--jobs", opt_jobs, "Synthetic jobs per replication")->capture_default_str();
    optim->add_option("--seed", opt_seed, "Base seed")->capture_default_str();
    optim->add_option("--replications", opt_reps, "Replications per grid pair")->capture_default_str();
    optim->add_option("--warmup", opt_warmup, "Warm-up fraction")->capture_default_str();
    optim->add_option("--quantiles", opt_quantiles, "Theta quantile grid")->delimiter(',');
    optim->add_option("--n1", opt_n1s, "n1 grid (default: all of 1..n-1, coarse above n=20)")->delimiter(',');
    optim->add_option("--out", opt_out, "Write the candidate table to <out>.csv and <out>.json");

    // figure-data ------------------------------------------------------------
    std::string fig_results;
    std::string fig_kind;
    std::string fig_out;
    auto* fig = app.add_subcommand("figure-data", "Reshape summary results into a plotting table");
    fig->add_option("--results", fig_results, "Summary CSV from simulate or sweep")->required();
    fig->add_option("--figure", fig_kind, "rho-curve | n-curve")
        ->required()
        ->check(CLI::IsMember({"rho-curve", "n-curve"}));
    fig->add_option("--out", fig_out, "Write CSV here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: usage: " << detail::one_line(e.what()) << '\n';
        return 2;
    }

    try {
        if (*fit) {
            const WeibullParams p = fit_weibull(fit_mean, fit_cov);
            nlohmann::ordered_json j;
            j["scale_a"] = p.scale;
            j["shape_b"] = p.shape;
            j["mean"] = p.mean();
            j["cov"] = p.cov();
            out << j.dump(2) << '\n';
            return 0;
        }

        if (*gen) {
            detail::check_rho(gen_rho);
            detail::check_positive(gen_cov, "--cov");
            detail::check_positive(gen_mean, "--mean");
            detail::check_positive(gen_capacity, "--capacity");
            if (gen_jobs == 0)
                throw CliError("usage", "--jobs must be >= 1");
            const auto recipe = WorkloadRecipe::synthetic(gen_cov, gen_jobs, gen_mean);
            const auto w = recipe.build(gen_rho, gen_capacity, derive_seed(gen_seed, 0));
            auto file = detail::open_out(gen_out);
            write_trace(file, *w,
                        {{"command", "gen-workload"},
                         {"rho", text::format_double(gen_rho)},
                         {"capacity", text::format_double(gen_capacity)},
                         {"jobs", std::to_string(gen_jobs)},
                         {"base_seed", std::to_string(gen_seed)}});
            out << "wrote " << w->jobs.size() << " jobs to " << gen_out << '\n';
            return 0;
        }

        if (*ing) {
            const auto w = detail::load_trace(ing_path);
            const Distribution law = Distribution::from_tasks(*w);
            nlohmann::ordered_json j;
            j["jobs"] = w->jobs.size();
            j["tasks"] = w->tasks.size();
            j["horizon"] = w->horizon;
            j["total_work"] = w->total_work();
            j["mean_task_size"] = law.mean();
            j["task_size_cov"] = law.cov();
            if (ing_n || ing_rho) {
                if (!ing_n || !ing_rho)
                    throw CliError("usage", "--n and --rho must be given together");
                detail::check_rho(*ing_rho);
                const ClusterConfig cfg = calibrate_mu(*w, *ing_n, *ing_rho);
                j["n"] = cfg.n;
                j["rho"] = cfg.target_rho;
                j["arrival_rate"] = cfg.arrival_rate;
                j["mean_job_size"] = cfg.mean_job_size;
                j["mu"] = cfg.mu;
                j["total_capacity"] = cfg.total_capacity;
            }
            if (!ing_out.empty()) {
                auto file = detail::open_out(ing_out);
                write_trace(file, *w);
            }
            out << j.dump(2) << '\n';
            return 0;
        }

        if (*card) {
            detail::check_rho(card_rho);
            if (card_n < 2)
                throw CliError("usage", "--n must be >= 2");
            std::optional<Distribution> law;
            if (!card_trace.empty()) {
                law = Distribution::from_tasks(*detail::load_trace(card_trace));
            } else if (card_cov) {
                detail::check_positive(*card_cov, "--cov");
                law = Distribution::weibull(fit_weibull(card_mean, *card_cov));
            } else {
                throw CliError("usage", "one of --cov or --trace is required");
            }
            const std::string text = detail::thresholds_json(card_thresholds(*law, card_n, card_rho)).dump(2) + "\n";
            if (card_out.empty())
                out << text;
            else
                detail::write_file(card_out, text);
            return 0;
        }

        if (*sim) {
            detail::check_rho(sim_rho);
            if (sim_n < 1)
                throw CliError("usage", "--n must be >= 1");
            if (!sim_cov && sim_trace.empty())
                throw CliError("usage", "one of --cov or --trace is required");
            if (sim_cov)
                detail::check_positive(*sim_cov, "--cov");
            if (sim_reps == 0)
                throw CliError("usage", "--replications must be >= 1");
            if (!(sim_warmup >= 0.0 && sim_warmup < 1.0))
                throw CliError("usage", "--warmup must lie in [0, 1)");
            PolicyName name;
            try {
                name = parse_policy_name(sim_policy);
            } catch (const std::exception& e) {
                throw CliError("usage", e.what());
            }
            if (sim_n1)
                name.n1 = sim_n1;
            if (sim_theta)
                name.theta = sim_theta;
            if (sim_theta_q)
                name.theta_quantile = sim_theta_q;
            if (!name.two_stage && (sim_n1 || sim_theta || sim_theta_q))
                throw CliError("usage", "--n1/--theta/--theta-quantile apply to two_stage policies only");
            if (name.two_stage) {
                if (!name.n1 || (!name.theta && !name.theta_quantile))
                    throw CliError("usage", "two-stage simulate needs --n1 and --theta or --theta-quantile "
                                            "(use optimize-two-stage to search them)");
                if (name.theta && name.theta_quantile)
                    throw CliError("usage", "--theta and --theta-quantile are mutually exclusive");
                if (*name.n1 < 1 || *name.n1 > sim_n - 1)
                    throw CliError("usage", "--n1 must lie in [1, n-1]");
                if (name.theta_quantile && !(*name.theta_quantile > 0.0 && *name.theta_quantile < 1.0))
                    throw CliError("usage", "--theta-quantile must lie in (0, 1)");
                if (name.theta && !(*name.theta > 0.0))
                    throw CliError("usage", "--theta must be positive");
            }
            std::string label = name.label();
            if (name.two_stage) {
                label += ",n1=" + std::to_string(*name.n1);
                label += name.theta ? ",theta=" + text::format_double(*name.theta)
                                    : ",theta_q=" + text::format_double(*name.theta_quantile);
            }

            SweepPlan plan;
            plan.rho = {sim_rho};
            plan.n = {sim_n};
            plan.policies = {label};
            plan.jobs = sim_jobs;
            plan.replications = sim_reps;
            plan.seed = sim_seed;
            plan.warmup_fraction = sim_warmup;
            if (sim_cov) {
                plan.cov = {*sim_cov};
            } else {
                detail::load_trace(sim_trace); // surfaces parse errors with the trace kind
                plan.trace = sim_trace;
            }
            const SweepResults res = run_sweep(plan);
            const ResultRow& row = res.summaries.front();

            ConfigEcho echo = plan_echo(plan);
            echo.front().second = "simulate";
            if (!sim_out.empty()) {
                auto csv = detail::open_out(sim_out + ".csv");
                write_results_csv(csv, res.summaries, echo);
                auto j = results_json(res.summaries, echo);
                j["replications"] = nlohmann::ordered_json::array();
                for (const auto& r : res.rows)
                    j["replications"].push_back(row_to_json(r));
                detail::write_file(sim_out + ".json", j.dump(2) + "\n");
            }
            if (!sim_log.empty()) {
                const auto recipe = plan.trace ? WorkloadRecipe::trace(detail::load_trace(*plan.trace))
                                               : WorkloadRecipe::synthetic(*sim_cov, sim_jobs);
                const std::uint64_t seed = derive_seed(sim_seed, 0);
                const auto w = recipe.build(sim_rho, 1.0, seed);
                const ClusterConfig cfg = calibrate_mu(*w, sim_n, sim_rho);
                const PolicySpec spec = resolve_policy(name, recipe.law(), sim_n, sim_rho);
                auto log = detail::open_out(sim_log);
                log << "job_id,task_index,arrival,completion,stage,server\n";
                twostage::run(*w, cfg, spec, seed, [&](const TaskCompletion& c) {
                    log << w->jobs[c.job].job_id << ',' << c.task_index << ','
                        << text::format_double(c.arrival) << ',' << text::format_double(c.completion) << ','
                        << c.stage << ',' << c.server << '\n';
                });
            }

            out << "policy=" << row.policy << " n=" << row.n << " rho=" << text::format_double(row.rho);
            if (row.n1)
                out << " n1=" << *row.n1 << " theta=" << text::format_double(*row.theta);
            out << " mrt_seconds=" << text::format_double(row.mrt_seconds);
            if (row.normalized_mrt)
                out << " normalized_mrt=" << text::format_double(*row.normalized_mrt);
            else
                out << " mrt_hours=" << text::format_double(row.mrt_seconds / 3600.0) << " normalized=false";
            if (row.ci_half_width)
                out << " ci_half_width=" << text::format_double(*row.ci_half_width);
            out << '\n';
            return 0;
        }

        if (*sweep) {
            SweepPlan plan;
            try {
                plan = load_sweep_plan(sweep_plan);
            } catch (const std::exception& e) {
                throw CliError("plan", e.what());
            }
            if (!sweep_out.empty())
                plan.output = sweep_out;
            if (!plan.output)
                throw CliError("usage", "no output prefix (set \"output\" in the plan or pass --out)");
            if (plan.trace)
                detail::load_trace(*plan.trace);
            const SweepResults res = run_sweep(plan);
            const ConfigEcho echo = plan_echo(plan);
            {
                auto csv = detail::open_out(*plan.output + ".csv");
                write_results_csv(csv, res.rows, echo);
            }
            {
                auto csv = detail::open_out(*plan.output + "_summary.csv");
                write_results_csv(csv, res.summaries, echo);
            }
            detail::write_file(*plan.output + ".json", results_json(res.summaries, echo).dump(2) + "\n");
            out << "wrote " << res.rows.size() << " rows and " << res.summaries.size() << " summaries to "
                << *plan.output << "{.csv,_summary.csv,.json}\n";
            return 0;
        }

        if (*optim) {
            detail::check_rho(opt_rho);
            if (opt_n < 2)
                throw CliError("usage", "--n must be >= 2");
            const auto inner = policy_kind_from(opt_inner);
            if (!inner || *inner == PolicyKind::card)
                throw CliError("usage", "--inner must be one of rr, jiq, lwl");
            if (!opt_cov && opt_trace.empty())
                throw CliError("usage", "one of --cov or --trace is required");
            if (opt_reps == 0)
                throw CliError("usage", "--replications must be >= 1");
            for (double q : opt_quantiles)
                if (!(q > 0.0 && q < 1.0))
                    throw CliError("usage", "--quantiles values must lie in (0, 1)");
            for (int v : opt_n1s)
                if (v < 1 || v > opt_n - 1)
                    throw CliError("usage", "--n1 values must lie in [1, n-1]");
            const auto recipe = opt_cov ? WorkloadRecipe::synthetic(*opt_cov, opt_jobs)
                                        : WorkloadRecipe::trace(detail::load_trace(opt_trace));
            TwoStageGrid grid;
            grid.quantiles = opt_quantiles;
            if (!opt_n1s.empty())
                grid.n1 = opt_n1s;
            MeasureOptions mopt;
            mopt.warmup_fraction = opt_warmup;
            const OptimizeResult best =
                optimize_two_stage(*inner, opt_n, opt_rho, recipe, grid, opt_reps, opt_seed, mopt);

            const std::string label = "two_stage:" + std::string(to_string(*inner));
            std::vector<ResultRow> table;
            for (const auto& c : best.table) {
                ResultRow r;
                r.policy = label;
                r.n = opt_n;
                r.rho = opt_rho;
                r.theta = c.theta;
                r.theta_quantile = c.theta_quantile;
                r.n1 = c.n1;
                r.cov = recipe.cov();
                r.seed = opt_seed;
                r.mrt_seconds = c.mrt.mean;
                r.ci_half_width = c.mrt.ci_half_width;
                bool all = true;
                double sum = 0.0;
                for (const auto& v : c.normalized) {
                    all = all && v.has_value();
                    sum += v.value_or(0.0);
                }
                if (all)
                    r.normalized_mrt = sum / static_cast<double>(c.normalized.size());
                table.push_back(r);
            }
            if (!opt_out.empty()) {
                ConfigEcho echo{{"command", "optimize-two-stage"},
                                {"inner", opt_inner},
                                {"n", std::to_string(opt_n)},
                                {"rho", text::format_double(opt_rho)},
                                {opt_cov ? "cov" : "trace", opt_cov ? text::format_double(*opt_cov) : opt_trace},
                                {"jobs", std::to_string(opt_jobs)},
                                {"replications", std::to_string(opt_reps)},
                                {"seed", std::to_string(opt_seed)},
                                {"warmup_fraction", text::format_double(opt_warmup)}};
                auto csv = detail::open_out(opt_out + ".csv");
                write_results_csv(csv, table, echo);
                auto j = results_json(table, echo);
                j["best"] = row_to_json(table[best.best]);
                detail::write_file(opt_out + ".json", j.dump(2) + "\n");
            }
            const auto& b = table[best.best];
            out << "policy=" << label << " n=" << opt_n << " rho=" << text::format_double(opt_rho)
                << " theta_quantile=" << text::format_double(best.theta_quantile)
                << " theta=" << text::format_double(best.theta) << " n1=" << best.n1
                << " mrt_seconds=" << text::format_double(best.mrt);
            if (b.normalized_mrt)
                out << " normalized_mrt=" << text::format_double(*b.normalized_mrt);
            out << '\n';
            return 0;
        }

        if (*fig) {
            std::ifstream in(fig_results);
            if (!in)
                throw CliError("io", "cannot open results '" + fig_results + "'");
            std::vector<ResultRow> rows;
            try {
                rows = read_results_csv(in);
            } catch (const std::exception& e) {
                throw CliError("input", e.what());
            }
            std::string table;
            try {
                table = figure_table(rows, fig_kind == "rho-curve" ? FigureAxis::rho : FigureAxis::n);
            } catch (const std::invalid_argument& e) {
                throw CliError("coverage", e.what());
            }
            if (fig_out.empty())
                out << table;
            else
                detail::write_file(fig_out, table);
            return 0;
        }
    } catch (const CliError& e) {
        err << "error: " << e.kind() << ": " << detail::one_line(e.what()) << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: runtime: " << detail::one_line(e.what()) << '\n';
        return 1;
    }
    return 0;
}

} // namespace twostage::cli
