#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "twostage/random.hpp"
#include "twostage/text.hpp"

namespace twostage {

/// One task: CPU-seconds needed on a reference unit-speed server.
struct TaskSpec {
    std::uint32_t task_index = 0;
    double size = 0.0;

    bool operator==(const TaskSpec&) const = default;
};

/// A job and the slice of Workload::tasks it owns. All tasks share the
/// job's arrival time.
struct JobSpec {
    std::int64_t job_id = 0;
    double arrival_time = 0.0;
    std::size_t first_task = 0;
    std::uint32_t task_count = 0;

    bool operator==(const JobSpec&) const = default;
};

/// Weibull law with CCDF exp(-(x/scale)^shape).
struct WeibullParams {
    double scale = 1.0;
    double shape = 1.0;

    [[nodiscard]] double mean() const { return scale * std::tgamma(1.0 + 1.0 / shape); }
    [[nodiscard]] double second_moment() const {
        return scale * scale * std::tgamma(1.0 + 2.0 / shape);
    }
    [[nodiscard]] double cov() const {
        const double m = mean();
        return std::sqrt(std::max(0.0, second_moment() - m * m)) / m;
    }
    [[nodiscard]] double ccdf(double x) const {
        return x <= 0.0 ? 1.0 : std::exp(-std::pow(x / scale, shape));
    }

    bool operator==(const WeibullParams&) const = default;
};

enum class WorkloadSource { synthetic, trace };

/// Nominal parameters of a generated workload, carried through CSV export
/// so a re-ingested file calibrates exactly like the original.
struct SyntheticOrigin {
    double arrival_rate = 0.0;
    double mean_size = 1.0;
    double cov = 1.0;
    WeibullParams params;
    std::uint64_t seed = 0;

    bool operator==(const SyntheticOrigin&) const = default;
};

struct Workload {
    std::vector<JobSpec> jobs;
    std::vector<TaskSpec> tasks;
    double horizon = 0.0;
    WorkloadSource source = WorkloadSource::synthetic;
    std::optional<SyntheticOrigin> origin;

    [[nodiscard]] std::span<const TaskSpec> tasks_of(const JobSpec& job) const {
        return std::span<const TaskSpec>(tasks).subspan(job.first_task, job.task_count);
    }
    [[nodiscard]] double total_work() const {
        double total = 0.0;
        for (const auto& t : tasks)
            total += t.size;
        return total;
    }

    /// Throws std::logic_error naming the first broken invariant.
    void validate() const {
        std::size_t expected_first = 0;
        double last = 0.0;
        for (std::size_t j = 0; j < jobs.size(); ++j) {
            const auto& job = jobs[j];
            if (job.task_count == 0)
                throw std::logic_error("workload: job without tasks");
            if (job.first_task != expected_first)
                throw std::logic_error("workload: task slices are not contiguous");
            if (!(job.arrival_time >= 0.0))
                throw std::logic_error("workload: negative arrival time");
            if (j > 0 && job.arrival_time < last)
                throw std::logic_error("workload: arrivals not sorted");
            last = job.arrival_time;
            expected_first += job.task_count;
        }
        if (expected_first != tasks.size())
            throw std::logic_error("workload: task count mismatch");
        for (const auto& t : tasks)
            if (!(t.size > 0.0))
                throw std::logic_error("workload: non-positive task size");
        if (!jobs.empty() && horizon < last)
            throw std::logic_error("workload: horizon before last arrival");
    }

    bool operator==(const Workload&) const = default;
};

/// Cluster dimensioning. Satisfies target_rho = arrival_rate * mean_job_size / (n * mu).
struct ClusterConfig {
    int n = 1;
    double mu = 1.0;
    double total_capacity = 1.0;
    double target_rho = 0.5;
    double arrival_rate = 0.5;
    double mean_job_size = 1.0;

    [[nodiscard]] double utilization() const { return arrival_rate * mean_job_size / (n * mu); }
};

// ---------------------------------------------------------------------------
// Weibull fitting and sampling
// ---------------------------------------------------------------------------

/// Weibull (scale, shape) with the given mean and coefficient of variation.
///
/// Bisects on the shape so that Gamma(1+2/b)/Gamma(1+1/b)^2 = 1 + cov^2, then
/// solves the scale from the mean. Throws std::runtime_error when the shape
/// cannot be bracketed (cov vanishingly small or absurdly large).
inline WeibullParams fit_weibull(double mean, double cov) {
    if (!(mean > 0.0) || !(cov > 0.0) || !std::isfinite(mean) || !std::isfinite(cov))
        throw std::invalid_argument("fit_weibull: mean and cov must be positive and finite");

    const double target = std::log1p(cov * cov);
    auto excess = [target](double b) {
        return std::lgamma(1.0 + 2.0 / b) - 2.0 * std::lgamma(1.0 + 1.0 / b) - target;
    };

    // excess() is strictly decreasing in b.
    double lo = 1.0;
    double hi = 1.0;
    while (excess(lo) <= 0.0) {
        lo *= 0.5;
        if (lo < 1e-3)
            throw std::runtime_error("fit_weibull: shape did not converge (cov too large)");
    }
    while (excess(hi) >= 0.0) {
        hi *= 2.0;
        if (hi > 1e6)
            throw std::runtime_error("fit_weibull: shape did not converge (cov too close to 0)");
    }
    for (int iter = 0; iter < 400 && hi - lo > 4 * std::numeric_limits<double>::epsilon() * hi;
         ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (excess(mid) > 0.0)
            lo = mid;
        else
            hi = mid;
    }
    const double shape = std::abs(excess(lo)) < std::abs(excess(hi)) ? lo : hi;
    WeibullParams params{mean / std::tgamma(1.0 + 1.0 / shape), shape};

    const double ratio = std::exp(std::lgamma(1.0 + 2.0 / shape) - 2.0 * std::lgamma(1.0 + 1.0 / shape));
    if (std::abs(ratio - (1.0 + cov * cov)) > 1e-10 * (1.0 + cov * cov) ||
        std::abs(params.mean() - mean) > 1e-10 * mean)
        throw std::runtime_error("fit_weibull: moment equations not met to 1e-10");
    return params;
}

/// Inversion at a given uniform variate: scale * (-ln u)^(1/shape).
inline double weibull_inverse(const WeibullParams& params, double u) {
    return params.scale * std::pow(-std::log(u), 1.0 / params.shape);
}

inline double sample_weibull(const WeibullParams& params, Stream& rng) {
    return weibull_inverse(params, rng.uniform());
}

/// Poisson arrivals, one Weibull task per job. Arrivals are unit-rate
/// exponentials scaled by 1/arrival_rate, so the same seed yields the same
/// realization at every load level.
inline Workload generate_poisson_weibull(double arrival_rate, const WeibullParams& params,
                                         std::size_t job_count, std::uint64_t seed) {
    if (!(arrival_rate > 0.0))
        throw std::invalid_argument("generate_poisson_weibull: arrival_rate must be positive");
    if (job_count == 0)
        throw std::invalid_argument("generate_poisson_weibull: job_count must be >= 1");

    const Stream root(seed);
    Stream arrivals = root.split(StreamLabel::arrivals);
    Stream sizes = root.split(StreamLabel::sizes);

    Workload w;
    w.source = WorkloadSource::synthetic;
    w.jobs.reserve(job_count);
    w.tasks.reserve(job_count);
    double t = 0.0;
    for (std::size_t j = 0; j < job_count; ++j) {
        t += arrivals.exponential(1.0) / arrival_rate;
        w.jobs.push_back({static_cast<std::int64_t>(j), t, j, 1});
        w.tasks.push_back({0, sample_weibull(params, sizes)});
    }
    w.horizon = t;
    w.origin = SyntheticOrigin{arrival_rate, params.mean(), params.cov(), params, seed};
    return w;
}

// ---------------------------------------------------------------------------
// Canonical trace CSV
// ---------------------------------------------------------------------------

inline constexpr std::string_view kTraceHeader = "job_id,arrival_time,task_index,size";

class TraceError : public std::runtime_error {
public:
    TraceError(std::size_t line, const std::string& reason, const std::string& file = {})
        : std::runtime_error((file.empty() ? "" : file + ": ") + "line " + std::to_string(line) +
                             ": " + reason),
          line_(line), reason_(reason) {}
    [[nodiscard]] std::size_t line() const noexcept { return line_; }
    [[nodiscard]] const std::string& reason() const noexcept { return reason_; }

private:
    std::size_t line_;
    std::string reason_;
};

/// Parses the canonical CSV. `# key=value` lines before the header are
/// metadata; `horizon` overrides the default max-arrival horizon and a
/// `source=synthetic` block restores the SyntheticOrigin.
inline Workload parse_trace(std::istream& in) {
    std::map<std::string, std::string, std::less<>> meta;
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;

    struct Row {
        std::int64_t job_id;
        double arrival;
        std::uint32_t task_index;
        double size;
        std::size_t line;
    };
    std::vector<Row> rows;

    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view view = text::trim(line);
        if (view.empty())
            continue;
        if (view.front() == '#') {
            if (header_seen)
                continue;
            auto body = text::trim(view.substr(1));
            const auto eq = body.find('=');
            if (eq != std::string_view::npos)
                meta.emplace(std::string(text::trim(body.substr(0, eq))),
                             std::string(text::trim(body.substr(eq + 1))));
            continue;
        }
        if (!header_seen) {
            if (view != kTraceHeader)
                throw TraceError(lineno, "expected header '" + std::string(kTraceHeader) + "'");
            header_seen = true;
            continue;
        }
        const auto fields = text::split(view, ',');
        if (fields.size() != 4)
            throw TraceError(lineno, "expected 4 fields, got " + std::to_string(fields.size()));
        const auto job_id = text::parse_int<std::int64_t>(fields[0]);
        const auto arrival = text::parse_double(fields[1]);
        const auto task_index = text::parse_int<std::uint32_t>(fields[2]);
        const auto size = text::parse_double(fields[3]);
        if (!job_id)
            throw TraceError(lineno, "malformed job_id");
        if (!arrival || !std::isfinite(*arrival))
            throw TraceError(lineno, "malformed arrival_time");
        if (*arrival < 0.0)
            throw TraceError(lineno, "negative arrival_time");
        if (!task_index)
            throw TraceError(lineno, "malformed task_index");
        if (!size || !std::isfinite(*size))
            throw TraceError(lineno, "malformed size");
        if (*size <= 0.0)
            throw TraceError(lineno, "size must be positive");
        rows.push_back({*job_id, *arrival, *task_index, *size, lineno});
    }
    if (!header_seen)
        throw TraceError(lineno, "empty file");
    if (rows.empty())
        throw TraceError(lineno, "no task rows");

    // Group by job id in order of first appearance.
    struct Group {
        std::int64_t job_id;
        double arrival;
        std::vector<TaskSpec> tasks;
    };
    std::vector<Group> groups;
    std::unordered_map<std::int64_t, std::size_t> group_of;
    std::unordered_map<std::int64_t, std::vector<std::uint32_t>> seen_indices;
    for (const auto& r : rows) {
        auto [it, inserted] = group_of.try_emplace(r.job_id, groups.size());
        if (inserted) {
            groups.push_back({r.job_id, r.arrival, {}});
        } else if (groups[it->second].arrival != r.arrival) {
            throw TraceError(r.line, "job " + std::to_string(r.job_id) +
                                         " has tasks with different arrival times");
        }
        auto& indices = seen_indices[r.job_id];
        if (std::find(indices.begin(), indices.end(), r.task_index) != indices.end())
            throw TraceError(r.line, "duplicate (job_id, task_index) = (" +
                                         std::to_string(r.job_id) + ", " +
                                         std::to_string(r.task_index) + ")");
        indices.push_back(r.task_index);
        groups[it->second].tasks.push_back({r.task_index, r.size});
    }
    std::stable_sort(groups.begin(), groups.end(),
                     [](const Group& a, const Group& b) { return a.arrival < b.arrival; });

    Workload w;
    w.source = WorkloadSource::trace;
    w.jobs.reserve(groups.size());
    w.tasks.reserve(rows.size());
    for (const auto& g : groups) {
        w.jobs.push_back({g.job_id, g.arrival, w.tasks.size(),
                          static_cast<std::uint32_t>(g.tasks.size())});
        w.tasks.insert(w.tasks.end(), g.tasks.begin(), g.tasks.end());
    }
    w.horizon = w.jobs.back().arrival_time;

    auto number = [&](std::string_view key) -> std::optional<double> {
        auto it = meta.find(key);
        if (it == meta.end())
            return std::nullopt;
        auto v = text::parse_double(it->second);
        if (!v)
            throw TraceError(0, "malformed metadata value for '" + std::string(key) + "'");
        return v;
    };
    if (auto h = number("horizon")) {
        if (*h < w.horizon)
            throw TraceError(0, "horizon override precedes the last arrival");
        w.horizon = *h;
    }
    if (auto it = meta.find("source"); it != meta.end() && it->second == "synthetic") {
        auto rate = number("arrival_rate");
        auto mean = number("mean_size");
        auto cov = number("cov");
        auto scale = number("scale_a");
        auto shape = number("shape_b");
        if (!rate || !mean || !cov || !scale || !shape)
            throw TraceError(0, "synthetic source metadata incomplete");
        SyntheticOrigin origin{*rate, *mean, *cov, {*scale, *shape}, 0};
        if (auto it2 = meta.find("seed"); it2 != meta.end())
            if (auto s = text::parse_int<std::uint64_t>(it2->second))
                origin.seed = *s;
        w.source = WorkloadSource::synthetic;
        w.origin = origin;
    }
    return w;
}

inline Workload ingest_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open trace file '" + path + "'");
    try {
        return parse_trace(in);
    } catch (const TraceError& e) {
        throw TraceError(e.line(), e.reason(), path);
    }
}

/// Writes the canonical CSV. Extra metadata lines are emitted as `# key=value`.
inline void write_trace(std::ostream& out, const Workload& w,
                        const std::vector<std::pair<std::string, std::string>>& extra = {}) {
    using text::format_double;
    out << "# source=" << (w.source == WorkloadSource::synthetic ? "synthetic" : "trace") << '\n';
    out << "# horizon=" << format_double(w.horizon) << '\n';
    if (w.origin) {
        const auto& o = *w.origin;
        out << "# arrival_rate=" << format_double(o.arrival_rate) << '\n'
            << "# mean_size=" << format_double(o.mean_size) << '\n'
            << "# cov=" << format_double(o.cov) << '\n'
            << "# scale_a=" << format_double(o.params.scale) << '\n'
            << "# shape_b=" << format_double(o.params.shape) << '\n'
            << "# seed=" << o.seed << '\n';
    }
    for (const auto& [k, v] : extra)
        out << "# " << k << '=' << v << '\n';
    out << kTraceHeader << '\n';
    for (const auto& job : w.jobs) {
        const std::string arrival = format_double(job.arrival_time);
        for (const auto& t : w.tasks_of(job))
            out << job.job_id << ',' << arrival << ',' << t.task_index << ','
                << format_double(t.size) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// Server speed that puts the workload at `target_rho` on n servers.
///
/// Synthetic workloads use their nominal arrival rate and mean size; traces
/// estimate the offered load as total CPU-seconds over the horizon.
inline ClusterConfig calibrate_mu(const Workload& w, int n, double target_rho) {
    if (n < 1)
        throw std::invalid_argument("calibrate_mu: n must be >= 1");
    if (!(target_rho > 0.0 && target_rho < 1.0))
        throw std::invalid_argument("calibrate_mu: target_rho must lie in (0, 1)");
    if (w.jobs.empty())
        throw std::invalid_argument("calibrate_mu: empty workload");

    ClusterConfig cfg;
    cfg.n = n;
    cfg.target_rho = target_rho;
    if (w.origin) {
        cfg.arrival_rate = w.origin->arrival_rate;
        cfg.mean_job_size = w.origin->mean_size;
    } else {
        if (!(w.horizon > 0.0))
            throw std::invalid_argument("calibrate_mu: zero-duration workload");
        cfg.arrival_rate = static_cast<double>(w.jobs.size()) / w.horizon;
        cfg.mean_job_size = w.total_work() / static_cast<double>(w.jobs.size());
    }
    cfg.mu = cfg.arrival_rate * cfg.mean_job_size / (n * target_rho);
    cfg.total_capacity = n * cfg.mu;
    return cfg;
}

} // namespace twostage
