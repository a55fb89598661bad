#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <variant>
#include <vector>

#include "twostage/analysis.hpp"
#include "twostage/metrics.hpp"
#include "twostage/policies.hpp"
#include "twostage/workload.hpp"

namespace twostage {

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

inline constexpr const char* kWorkersEnv = "TWOSTAGE_WORKERS";

inline std::size_t default_workers() {
    if (const char* env = std::getenv(kWorkersEnv)) {
        if (auto v = text::parse_int<std::size_t>(env); v && *v > 0)
            return *v;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls fn(i) for i in [0, count) on a bounded pool. If any call throws, the
/// exception of the lowest failing index is rethrown after all workers stop.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn, std::size_t workers = default_workers()) {
    workers = std::max<std::size_t>(1, std::min(workers, count));
    std::vector<std::exception_ptr> errors(count);
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
                break;
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::atomic<bool> failed{false};
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count && !failed; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                        failed = true;
                    }
                }
            });
        }
    }
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Workload recipes
// ---------------------------------------------------------------------------

/// How to obtain the workload of a replication: synthetic M/G draws or a fixed trace.
class WorkloadRecipe {
public:
    static WorkloadRecipe synthetic(double cov, std::size_t jobs, double mean_size = 1.0) {
        WorkloadRecipe r;
        r.cov_ = cov;
        r.jobs_ = jobs;
        r.mean_size_ = mean_size;
        r.params_ = fit_weibull(mean_size, cov);
        r.law_ = std::make_shared<Distribution>(Distribution::weibull(r.params_));
        return r;
    }

    static WorkloadRecipe trace(std::shared_ptr<const Workload> workload) {
        WorkloadRecipe r;
        r.trace_ = std::move(workload);
        r.law_ = std::make_shared<Distribution>(r.trace_->origin
                                                    ? Distribution::weibull(r.trace_->origin->params)
                                                    : Distribution::from_tasks(*r.trace_));
        return r;
    }

    [[nodiscard]] bool is_synthetic() const { return trace_ == nullptr; }
    [[nodiscard]] std::optional<double> cov() const {
        if (is_synthetic())
            return cov_;
        if (trace_->origin)
            return trace_->origin->cov;
        return std::nullopt;
    }
    [[nodiscard]] const Distribution& law() const { return *law_; }

    /// Law used for normalization; null for real traces.
    [[nodiscard]] const Distribution* normalizer() const {
        return (is_synthetic() || trace_->origin) ? law_.get() : nullptr;
    }

    /// Workload for a replication. Synthetic arrivals use rate rho * capacity / mean.
    [[nodiscard]] std::shared_ptr<const Workload> build(double rho, double total_capacity,
                                                        std::uint64_t seed) const {
        if (!is_synthetic())
            return trace_;
        auto w = std::make_shared<Workload>(
            generate_poisson_weibull(rho * total_capacity / mean_size_, params_, jobs_, seed));
        w->origin->cov = cov_;
        w->origin->mean_size = mean_size_;
        return w;
    }

private:
    double cov_ = 1.0;
    std::size_t jobs_ = 0;
    double mean_size_ = 1.0;
    WeibullParams params_;
    std::shared_ptr<const Workload> trace_;
    std::shared_ptr<const Distribution> law_;
};

/// Resolves a policy name into a runnable spec. CARD thresholds come from
/// `law`; a theta quantile is taken on `law` as well.
inline PolicySpec resolve_policy(const PolicyName& name, const Distribution& law, int n, double rho) {
    PolicySpec spec;
    spec.kind = name.kind;
    if (name.kind == PolicyKind::card && !name.two_stage && n > 1)
        spec.card = card_thresholds(law, n, rho);
    else if (name.kind == PolicyKind::card && !name.two_stage)
        spec.card = CardThresholds{};
    if (name.two_stage) {
        if (!name.n1)
            throw std::invalid_argument("two-stage policy needs n1");
        if (!name.theta && !name.theta_quantile)
            throw std::invalid_argument("two-stage policy needs theta or theta_q");
        TwoStageSplit split;
        split.n1 = *name.n1;
        split.theta = name.theta ? *name.theta : quantile(law, *name.theta_quantile);
        spec.two_stage = split;
    }
    return spec;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct ResultRow {
    std::string policy;
    int n = 1;
    double rho = 0.0;
    std::optional<double> theta;
    std::optional<double> theta_quantile;
    std::optional<int> n1;
    std::optional<double> cov;
    std::uint64_t seed = 0;
    std::size_t replication = 0;
    double mrt_seconds = 0.0;
    std::optional<double> normalized_mrt;
    std::optional<double> ci_half_width;
};

/// Canonical order: cov, rho, n, policy, replication.
inline bool canonical_less(const ResultRow& a, const ResultRow& b) {
    const double ca = a.cov.value_or(-1.0);
    const double cb = b.cov.value_or(-1.0);
    return std::tie(ca, a.rho, a.n, a.policy, a.replication) <
           std::tie(cb, b.rho, b.n, b.policy, b.replication);
}

// ---------------------------------------------------------------------------
// Two-stage parameter optimization
// ---------------------------------------------------------------------------

inline const std::vector<double>& default_theta_quantiles() {
    static const std::vector<double> q{0.5, 0.8, 0.9, 0.95, 0.99, 0.995, 0.999};
    return q;
}

struct TwoStageGrid {
    std::vector<double> quantiles = default_theta_quantiles();
    std::optional<std::vector<int>> n1; // default: n1_candidates(n)
};

/// All of 1..n-1 for n <= 20; otherwise 1, ceil(k n / 8) for k = 1..7, and n - 1.
inline std::vector<int> n1_candidates(int n) {
    std::vector<int> out;
    if (n < 2)
        return out;
    if (n <= 20) {
        for (int k = 1; k < n; ++k)
            out.push_back(k);
        return out;
    }
    out.push_back(1);
    for (int k = 1; k < 8; ++k)
        out.push_back(static_cast<int>((static_cast<long>(k) * n + 7) / 8));
    out.push_back(n - 1);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    std::erase_if(out, [n](int v) { return v < 1 || v > n - 1; });
    return out;
}

struct TwoStageCandidate {
    double theta_quantile = 0.0;
    double theta = 0.0;
    int n1 = 1;
    Summary mrt;
    std::vector<double> per_replication;
    std::vector<std::optional<double>> normalized;
};

struct OptimizeResult {
    double theta = 0.0;
    double theta_quantile = 0.0;
    int n1 = 1;
    double mrt = 0.0;
    std::size_t best = 0; // index into table
    std::vector<TwoStageCandidate> table;
};

/// Picks (theta, n1) minimizing replication-mean MRT. Every candidate sees the
/// same workload realization per replication. Ties go to larger theta, then
/// larger n1.
inline OptimizeResult optimize_two_stage(PolicyKind inner, int n, double rho,
                                         const WorkloadRecipe& recipe, const TwoStageGrid& grid,
                                         std::size_t replications, std::uint64_t base_seed,
                                         const MeasureOptions& opt = {}, double total_capacity = 1.0,
                                         std::size_t workers = default_workers()) {
    if (n < 2)
        throw std::invalid_argument("optimize_two_stage: n must be >= 2");
    if (inner == PolicyKind::card)
        throw std::invalid_argument("optimize_two_stage: two-stage CARD is not supported");
    const std::vector<int> n1s = grid.n1 ? *grid.n1 : n1_candidates(n);
    if (grid.quantiles.empty() || n1s.empty())
        throw std::invalid_argument("optimize_two_stage: empty grid");
    if (replications == 0)
        throw std::invalid_argument("optimize_two_stage: replications must be >= 1");

    OptimizeResult out;
    for (double q : grid.quantiles)
        for (int n1 : n1s) {
            TwoStageCandidate c;
            c.theta_quantile = q;
            c.theta = quantile(recipe.law(), q);
            c.n1 = n1;
            c.per_replication.assign(replications, 0.0);
            c.normalized.assign(replications, std::nullopt);
            out.table.push_back(std::move(c));
        }

    const std::size_t pairs = out.table.size();
    MeasureOptions run_opt = opt;
    run_opt.keep_responses = false;
    for (std::size_t r = 0; r < replications; ++r) {
        const std::uint64_t seed = derive_seed(base_seed, r);
        const auto workload = recipe.build(rho, total_capacity, seed);
        const ClusterConfig cfg = calibrate_mu(*workload, n, rho);
        parallel_for(
            pairs,
            [&](std::size_t i) {
                auto& cand = out.table[i];
                PolicySpec spec;
                spec.kind = inner;
                spec.two_stage = TwoStageSplit{cand.n1, cand.theta};
                const RunResult res = measure(*workload, cfg, spec, seed, run_opt, recipe.normalizer());
                cand.per_replication[r] = res.mrt;
                cand.normalized[r] = res.normalized_mrt;
            },
            workers);
    }

    for (std::size_t i = 0; i < pairs; ++i) {
        auto& c = out.table[i];
        c.mrt = summarize(c.per_replication);
        const auto& best = out.table[out.best];
        const bool better =
            i == 0 || c.mrt.mean < best.mrt.mean ||
            (c.mrt.mean == best.mrt.mean &&
             (c.theta > best.theta || (c.theta == best.theta && c.n1 > best.n1)));
        if (better)
            out.best = i;
    }
    const auto& best = out.table[out.best];
    out.theta = best.theta;
    out.theta_quantile = best.theta_quantile;
    out.n1 = best.n1;
    out.mrt = best.mrt.mean;
    return out;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepPlan {
    std::vector<double> rho{0.8};
    std::vector<int> n{10};
    std::vector<std::string> policies{"rr", "jiq", "lwl", "card"};
    std::vector<double> cov{10.0};
    std::optional<std::string> trace; // replaces the cov axis when set
    std::size_t jobs = 2'000'000;
    std::size_t replications = 1;
    std::uint64_t seed = 1;
    double warmup_fraction = 0.1;
    double total_capacity = 1.0;
    TwoStageGrid two_stage_grid;
    std::optional<std::string> output;

    void validate() const {
        if (rho.empty() || n.empty() || policies.empty())
            throw std::invalid_argument("sweep plan: rho, n and policies must be non-empty");
        for (double r : rho)
            if (!(r > 0.0 && r < 1.0))
                throw std::invalid_argument("sweep plan: rho values must lie in (0, 1)");
        for (int v : n)
            if (v < 1)
                throw std::invalid_argument("sweep plan: n values must be >= 1");
        if (!trace && cov.empty())
            throw std::invalid_argument("sweep plan: cov axis is empty");
        for (double c : cov)
            if (!(c > 0.0))
                throw std::invalid_argument("sweep plan: cov values must be positive");
        if (replications == 0)
            throw std::invalid_argument("sweep plan: replications must be >= 1");
        if (!trace && jobs == 0)
            throw std::invalid_argument("sweep plan: jobs must be >= 1");
        if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
            throw std::invalid_argument("sweep plan: warmup_fraction must lie in [0, 1)");
        for (const auto& p : policies)
            (void)parse_policy_name(p);
    }
};

struct SweepResults {
    std::vector<ResultRow> rows;      // one per (point, replication)
    std::vector<ResultRow> summaries; // one per point
};

namespace detail {

inline ResultRow summary_row(const std::vector<ResultRow>& reps, std::uint64_t base_seed) {
    ResultRow s = reps.front();
    s.seed = base_seed;
    s.replication = 0;
    std::vector<double> mrts;
    std::vector<double> norms;
    for (const auto& r : reps) {
        mrts.push_back(r.mrt_seconds);
        if (r.normalized_mrt)
            norms.push_back(*r.normalized_mrt);
    }
    const Summary sm = summarize(mrts);
    s.mrt_seconds = sm.mean;
    s.ci_half_width = sm.ci_half_width;
    s.normalized_mrt = norms.size() == reps.size() ? std::optional<double>(summarize(norms).mean)
                                                    : std::nullopt;
    return s;
}

} // namespace detail

/// Runs every (cov|trace, rho, n, policy) point with the plan's replications.
/// Two-stage policies without an explicit (n1, theta) are optimized per point
/// over the plan's grid and reported at their optimum.
inline SweepResults run_sweep(const SweepPlan& plan, std::size_t workers = default_workers()) {
    plan.validate();

    std::vector<WorkloadRecipe> recipes;
    if (plan.trace) {
        recipes.push_back(WorkloadRecipe::trace(std::make_shared<Workload>(ingest_trace(*plan.trace))));
    } else {
        for (double c : plan.cov)
            recipes.push_back(WorkloadRecipe::synthetic(c, plan.jobs));
    }

    MeasureOptions opt;
    opt.warmup_fraction = plan.warmup_fraction;
    opt.keep_responses = false;

    SweepResults out;
    for (const auto& recipe : recipes) {
        for (double rho : plan.rho) {
            for (int n : plan.n) {
                for (const auto& label : plan.policies) {
                    const PolicyName name = parse_policy_name(label);
                    std::vector<ResultRow> reps(plan.replications);
                    const bool optimize = name.two_stage && (!name.n1 || (!name.theta && !name.theta_quantile));
                    try {
                        if (optimize) {
                            TwoStageGrid grid = plan.two_stage_grid;
                            if (name.n1)
                                grid.n1 = std::vector<int>{*name.n1};
                            if (name.theta_quantile)
                                grid.quantiles = {*name.theta_quantile};
                            const auto best = optimize_two_stage(name.kind, n, rho, recipe, grid,
                                                                 plan.replications, plan.seed, opt,
                                                                 plan.total_capacity, workers);
                            const auto& cand = best.table[best.best];
                            for (std::size_t r = 0; r < plan.replications; ++r) {
                                auto& row = reps[r];
                                row.theta = cand.theta;
                                row.theta_quantile = cand.theta_quantile;
                                row.n1 = cand.n1;
                                row.mrt_seconds = cand.per_replication[r];
                                row.normalized_mrt = cand.normalized[r];
                            }
                        } else {
                            const PolicySpec spec = resolve_policy(name, recipe.law(), n, rho);
                            parallel_for(
                                plan.replications,
                                [&](std::size_t r) {
                                    const std::uint64_t seed = derive_seed(plan.seed, r);
                                    const auto workload = recipe.build(rho, plan.total_capacity, seed);
                                    const ClusterConfig cfg = calibrate_mu(*workload, n, rho);
                                    const RunResult res =
                                        measure(*workload, cfg, spec, seed, opt, recipe.normalizer());
                                    reps[r].mrt_seconds = res.mrt;
                                    reps[r].normalized_mrt = res.normalized_mrt;
                                },
                                workers);
                            if (spec.two_stage) {
                                for (auto& row : reps) {
                                    row.theta = spec.two_stage->theta;
                                    row.theta_quantile = name.theta_quantile;
                                    row.n1 = spec.two_stage->n1;
                                }
                            }
                        }
                    } catch (const std::exception& e) {
                        throw std::runtime_error("sweep point policy=" + label + " n=" + std::to_string(n) +
                                                 " rho=" + text::format_double(rho) +
                                                 (recipe.cov() ? " cov=" + text::format_double(*recipe.cov())
                                                               : std::string()) +
                                                 " failed: " + e.what());
                    }
                    for (std::size_t r = 0; r < plan.replications; ++r) {
                        auto& row = reps[r];
                        row.policy = name.label();
                        row.n = n;
                        row.rho = rho;
                        row.cov = recipe.cov();
                        row.seed = derive_seed(plan.seed, r);
                        row.replication = r;
                    }
                    out.summaries.push_back(detail::summary_row(reps, plan.seed));
                    out.rows.insert(out.rows.end(), reps.begin(), reps.end());
                }
            }
        }
    }
    std::stable_sort(out.rows.begin(), out.rows.end(), canonical_less);
    std::stable_sort(out.summaries.begin(), out.summaries.end(), canonical_less);
    return out;
}

} // namespace twostage
