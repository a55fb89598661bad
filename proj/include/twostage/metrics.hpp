#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "twostage/analysis.hpp"
#include "twostage/engine.hpp"
#include "twostage/policies.hpp"
#include "twostage/text.hpp"
#include "twostage/workload.hpp"

namespace twostage {

/// Elapsed time from job arrival to its last task completion.
inline double job_response(double arrival, std::span<const double> completions) {
    if (completions.empty())
        throw std::invalid_argument("job_response: no task completions");
    return *std::max_element(completions.begin(), completions.end()) - arrival;
}

struct RunResult {
    std::vector<double> responses; // per job, post warm-up, arrival order
    std::size_t warmup_jobs = 0;
    std::size_t job_count = 0; // responses.size()
    double mrt = 0.0;
    std::optional<double> normalized_mrt;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
};

/// Folds task completions into job response times.
class ResponseCollector {
public:
    explicit ResponseCollector(const Workload& w, std::size_t admitted_jobs)
        : workload_(&w), remaining_(admitted_jobs), last_(admitted_jobs, 0.0) {
        for (std::size_t j = 0; j < admitted_jobs; ++j)
            remaining_[j] = w.jobs[j].task_count;
    }

    void operator()(const TaskCompletion& c) {
        if (remaining_[c.job] == 0)
            throw std::logic_error("ResponseCollector: job completed twice");
        last_[c.job] = std::max(last_[c.job], c.completion);
        --remaining_[c.job];
    }

    /// Responses of jobs with arrival ordinal >= warmup.
    [[nodiscard]] std::vector<double> responses(std::size_t warmup) const {
        std::vector<double> out;
        out.reserve(last_.size() > warmup ? last_.size() - warmup : 0);
        for (std::size_t j = warmup; j < last_.size(); ++j) {
            if (remaining_[j] != 0)
                throw std::runtime_error("job " + std::to_string(workload_->jobs[j].job_id) +
                                         " is missing a task completion");
            out.push_back(last_[j] - workload_->jobs[j].arrival_time);
        }
        return out;
    }

private:
    const Workload* workload_;
    std::vector<std::uint32_t> remaining_;
    std::vector<double> last_;
};

inline double mean_of(std::span<const double> values) {
    if (values.empty())
        return std::numeric_limits<double>::quiet_NaN();
    double sum = 0.0;
    for (double v : values)
        sum += v;
    return sum / static_cast<double>(values.size());
}

/// MRT normalized by the M/G/1 response at the full cluster capacity.
/// Returns nullopt when no analytic law is available (trace workloads).
inline std::optional<double> normalized_mrt(double mrt, const Distribution* dist, double arrival_rate,
                                            double total_capacity) {
    if (dist == nullptr)
        return std::nullopt;
    return mrt / mg1_mean_response(*dist, arrival_rate, total_capacity);
}

struct MeasureOptions {
    double warmup_fraction = 0.1;
    std::optional<std::size_t> warmup_jobs; // overrides the fraction
    StopRule stop;
    bool keep_responses = true;
};

inline std::size_t warmup_count(std::size_t jobs, const MeasureOptions& opt) {
    if (opt.warmup_jobs)
        return std::min(*opt.warmup_jobs, jobs);
    return static_cast<std::size_t>(std::floor(opt.warmup_fraction * static_cast<double>(jobs)));
}

inline std::uint64_t config_hash(const ClusterConfig& c, const PolicySpec& p) {
    std::string key = p.name() + "|" + std::to_string(c.n) + "|" + text::format_double(c.mu) + "|" +
                      text::format_double(c.target_rho) + "|" + text::format_double(c.arrival_rate);
    if (p.two_stage)
        key += "|" + std::to_string(p.two_stage->n1) + "|" + text::format_double(p.two_stage->theta);
    return text::fnv1a(key);
}

/// One simulation run reduced to job response statistics.
inline RunResult measure(const Workload& w, const ClusterConfig& config, const PolicySpec& spec,
                         std::uint64_t seed, const MeasureOptions& opt = {},
                         const Distribution* normalizer = nullptr) {
    Simulator sim(w, config, spec, seed, opt.stop);
    ResponseCollector collector(w, sim.jobs_admitted());
    sim.run(collector);

    RunResult r;
    r.warmup_jobs = warmup_count(sim.jobs_admitted(), opt);
    r.responses = collector.responses(r.warmup_jobs);
    r.job_count = r.responses.size();
    r.mrt = mean_of(r.responses);
    r.normalized_mrt = normalized_mrt(r.mrt, normalizer, config.arrival_rate, config.total_capacity);
    r.seed = seed;
    r.config_hash = config_hash(config, spec);
    if (!opt.keep_responses)
        r.responses = {};
    return r;
}

/// Mean and 95% Student-t half-width over replication values.
struct Summary {
    double mean = 0.0;
    std::optional<double> ci_half_width; // needs >= 2 replications
    std::size_t replications = 0;
};

inline Summary summarize(std::span<const double> values) {
    Summary s;
    s.replications = values.size();
    if (values.empty())
        return s;
    // Sorted so the result does not depend on replication order.
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    s.mean = mean_of(sorted);
    if (sorted.size() >= 2) {
        double ss = 0.0;
        for (double v : sorted)
            ss += (v - s.mean) * (v - s.mean);
        const double r = static_cast<double>(sorted.size());
        const double sd = std::sqrt(ss / (r - 1.0));
        const boost::math::students_t t(r - 1.0);
        s.ci_half_width = boost::math::quantile(boost::math::complement(t, 0.025)) * sd / std::sqrt(r);
    }
    return s;
}

/// Runs `replications` independent replications; `run_one(seed)` returns the
/// replication's MRT. Seeds are derived from `base_seed`.
template <class RunOne>
Summary replicate_and_summarize(std::size_t replications, std::uint64_t base_seed, RunOne&& run_one,
                                std::vector<double>* per_replication = nullptr) {
    std::vector<double> values;
    values.reserve(replications);
    for (std::size_t r = 0; r < replications; ++r)
        values.push_back(run_one(derive_seed(base_seed, r)));
    if (per_replication)
        *per_replication = values;
    return summarize(values);
}

} // namespace twostage
