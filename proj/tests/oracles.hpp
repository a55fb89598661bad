#pragma once

// Independent reference computations used only by tests. None of these call
// into the library's analysis or engine code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "twostage/workload.hpp"

namespace oracle {

/// Root of a monotone increasing f on [lo, hi] by plain bisection.
inline double bisect(const std::function<double(double)>& f, double lo, double hi, int iters = 200) {
    for (int i = 0; i < iters; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) < 0.0)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

/// Load fraction below m for the unit exponential: 1 - (1 + m) e^-m.
inline double exponential_partial_load(double m) { return 1.0 - (1.0 + m) * std::exp(-m); }

inline double exponential_threshold(double target) {
    return bisect([target](double m) { return exponential_partial_load(m) - target; }, 0.0, 50.0);
}

/// Regularized lower incomplete gamma P(s, x) by its power series
/// x^s e^-x sum_k x^k / Gamma(s + k + 1).
inline double gamma_p_series(double s, double x) {
    if (x <= 0.0)
        return 0.0;
    double term = std::exp(s * std::log(x) - x - std::lgamma(s + 1.0));
    double sum = term;
    for (int k = 1; k < 100000 && term > 1e-17 * sum; ++k) {
        term *= x / (s + k);
        sum += term;
    }
    return sum;
}

/// Fraction of Weibull(a, b) load carried by sizes up to m.
inline double weibull_partial_load(double a, double b, double m) {
    return gamma_p_series(1.0 + 1.0 / b, std::pow(m / a, b));
}

/// Per-server FCFS completion times by the Lindley recursion, given a fixed
/// server assignment. Tasks must be listed in arrival order.
struct AssignedTask {
    double arrival;
    double size;
    std::size_t server;
};

inline std::vector<double> fcfs_completions(const std::vector<AssignedTask>& tasks, std::size_t servers,
                                            double speed) {
    std::vector<double> free_at(servers, 0.0);
    std::vector<double> out;
    out.reserve(tasks.size());
    for (const auto& t : tasks) {
        const double start = std::max(free_at[t.server], t.arrival);
        free_at[t.server] = start + t.size / speed;
        out.push_back(free_at[t.server]);
    }
    return out;
}

/// Round-robin completion times of every task (in arrival order).
inline std::vector<double> round_robin_completions(const twostage::Workload& w, std::size_t servers,
                                                   double speed) {
    std::vector<AssignedTask> tasks;
    std::size_t k = 0;
    for (const auto& job : w.jobs)
        for (const auto& t : w.tasks_of(job))
            tasks.push_back({job.arrival_time, t.size, k++ % servers});
    return fcfs_completions(tasks, servers, speed);
}

/// Hand-built workload from (job_id, arrival, sizes...) triples.
struct JobRow {
    std::int64_t id;
    double arrival;
    std::vector<double> sizes;
};

inline twostage::Workload make_workload(const std::vector<JobRow>& rows) {
    twostage::Workload w;
    w.source = twostage::WorkloadSource::trace;
    for (const auto& r : rows) {
        w.jobs.push_back({r.id, r.arrival, w.tasks.size(), static_cast<std::uint32_t>(r.sizes.size())});
        std::uint32_t idx = 0;
        for (double s : r.sizes)
            w.tasks.push_back({idx++, s});
        w.horizon = std::max(w.horizon, r.arrival);
    }
    return w;
}

inline twostage::ClusterConfig config(int n, double mu) {
    twostage::ClusterConfig c;
    c.n = n;
    c.mu = mu;
    c.total_capacity = n * mu;
    c.target_rho = 0.5;
    c.arrival_rate = 1.0;
    c.mean_job_size = 0.5 * n * mu;
    return c;
}

} // namespace oracle
