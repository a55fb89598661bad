#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "twostage/workload.hpp"

namespace twostage {

/// Job/task size law: analytic Weibull or an empirical multiset.
class Distribution {
public:
    static Distribution weibull(const WeibullParams& params) {
        if (!(params.scale > 0.0) || !(params.shape > 0.0))
            throw std::invalid_argument("Distribution: Weibull parameters must be positive");
        Distribution d;
        d.law_ = params;
        d.mean_ = params.mean();
        d.second_moment_ = params.second_moment();
        return d;
    }

    static Distribution empirical(std::vector<double> sizes) {
        if (sizes.empty())
            throw std::invalid_argument("Distribution: empirical sample is empty");
        std::sort(sizes.begin(), sizes.end());
        if (!(sizes.front() > 0.0))
            throw std::invalid_argument("Distribution: empirical sizes must be positive");
        Empirical e;
        e.cumulative_work.resize(sizes.size());
        double total = 0.0;
        double total_sq = 0.0;
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            total += sizes[i];
            total_sq += sizes[i] * sizes[i];
            e.cumulative_work[i] = total;
        }
        e.sorted = std::move(sizes);
        Distribution d;
        const auto count = static_cast<double>(e.sorted.size());
        d.mean_ = total / count;
        d.second_moment_ = std::max(total_sq / count, d.mean_ * d.mean_);
        d.law_ = std::move(e);
        return d;
    }

    /// Task-size law of a workload; dispatch decisions are per task.
    static Distribution from_tasks(const Workload& w) {
        std::vector<double> sizes;
        sizes.reserve(w.tasks.size());
        for (const auto& t : w.tasks)
            sizes.push_back(t.size);
        return empirical(std::move(sizes));
    }

    [[nodiscard]] double mean() const { return mean_; }
    [[nodiscard]] double second_moment() const { return second_moment_; }
    [[nodiscard]] double cov() const {
        return std::sqrt(std::max(0.0, second_moment_ - mean_ * mean_)) / mean_;
    }

    [[nodiscard]] bool is_weibull() const { return std::holds_alternative<WeibullParams>(law_); }
    [[nodiscard]] const WeibullParams& weibull_params() const { return std::get<WeibullParams>(law_); }

    /// Sorted sizes (empirical kind only).
    [[nodiscard]] std::span<const double> sizes() const { return std::get<Empirical>(law_).sorted; }
    [[nodiscard]] std::span<const double> cumulative_work() const {
        return std::get<Empirical>(law_).cumulative_work;
    }

    /// P(S > x).
    [[nodiscard]] double ccdf(double x) const {
        if (is_weibull())
            return weibull_params().ccdf(x);
        const auto s = sizes();
        const auto above = s.end() - std::upper_bound(s.begin(), s.end(), x);
        return static_cast<double>(above) / static_cast<double>(s.size());
    }

private:
    struct Empirical {
        std::vector<double> sorted;
        std::vector<double> cumulative_work;
    };

    Distribution() = default;

    std::variant<WeibullParams, Empirical> law_;
    double mean_ = 0.0;
    double second_moment_ = 0.0;
};

/// Fraction of load carried by sizes up to m: (1/E[S]) * integral_0^m x f(x) dx.
///
/// Weibull: the regularized lower incomplete gamma P(1 + 1/b, (m/a)^b).
/// Empirical: work of sizes <= m over total work.
inline double partial_load(const Distribution& dist, double m) {
    if (!(m > 0.0))
        return 0.0;
    if (std::isinf(m))
        return 1.0;
    if (dist.is_weibull()) {
        const auto& p = dist.weibull_params();
        return boost::math::gamma_p(1.0 + 1.0 / p.shape, std::pow(m / p.scale, p.shape));
    }
    const auto s = dist.sizes();
    const auto cw = dist.cumulative_work();
    const auto count = std::upper_bound(s.begin(), s.end(), m) - s.begin();
    return count == 0 ? 0.0 : cw[count - 1] / cw.back();
}

/// Same quantity as partial_load for the Weibull kind, by adaptive
/// quadrature of u^(1/b) e^(-u) / Gamma(1 + 1/b) over [0, (m/a)^b]: tanh-sinh up to
/// the mode (absorbs the u^(1/b) endpoint behaviour), Gauss-Kronrod beyond it.
inline double partial_load_quadrature(const WeibullParams& p, double m) {
    if (!(m > 0.0))
        return 0.0;
    const double k = 1.0 / p.shape;
    const double upper = std::pow(m / p.scale, p.shape);
    const double log_norm = std::lgamma(1.0 + k);
    auto integrand = [k, log_norm](double u) {
        return u <= 0.0 ? 0.0 : std::exp(k * std::log(u) - u - log_norm);
    };
    using Quad = boost::math::quadrature::gauss_kronrod<double, 61>;
    const double mode = std::min(k, upper);
    double total = 0.0;
    if (mode > 0.0) {
        boost::math::quadrature::tanh_sinh<double> head;
        total += head.integrate(integrand, 0.0, mode, 1e-13);
    }
    if (upper > mode) {
        const double tail_end = std::min(upper, mode + 60.0 + 20.0 * std::sqrt(k + 1.0));
        total += Quad::integrate(integrand, mode, tail_end, 15, 1e-13);
    }
    return std::min(total, 1.0);
}

/// Size quantile. Weibull: inversion; empirical: nearest rank.
inline double quantile(const Distribution& dist, double q) {
    if (!(q > 0.0 && q < 1.0))
        throw std::invalid_argument("quantile: q must lie in (0, 1)");
    if (dist.is_weibull()) {
        const auto& p = dist.weibull_params();
        return p.scale * std::pow(-std::log1p(-q), 1.0 / p.shape);
    }
    const auto s = dist.sizes();
    const auto n = static_cast<double>(s.size());
    auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, s.size());
    return s[rank - 1];
}

/// Size thresholds m_1..m_n and work thresholds c_1..c_{n-1} for CARD.
struct CardThresholds {
    std::vector<double> m;
    std::vector<double> c;
    /// Load fraction in [0,m_1), [m_1,m_2), ..., [m_n, inf); n + 1 entries.
    std::vector<double> band_loads;
    /// Set when an empirical law could not hit a target exactly and the
    /// smallest size reaching the target was used instead.
    bool approximate = false;
    double rho = 0.0;
};

inline CardThresholds card_thresholds(const Distribution& dist, int n, double rho) {
    if (n < 1)
        throw std::invalid_argument("card_thresholds: n must be >= 1");
    if (!(rho > 0.0 && rho < 1.0))
        throw std::invalid_argument("card_thresholds: rho must lie in (0, 1)");

    CardThresholds th;
    th.rho = rho;
    th.m.reserve(n);
    for (int i = 1; i <= n; ++i) {
        const double target = (i - 0.5) / n;
        double threshold = 0.0;
        if (dist.is_weibull()) {
            double lo = 0.0;
            double hi = dist.mean();
            while (partial_load(dist, hi) < target)
                hi *= 2.0;
            for (int iter = 0; iter < 300; ++iter) {
                const double mid = 0.5 * (lo + hi);
                const double load = partial_load(dist, mid);
                if (std::abs(load - target) <= 1e-13 || hi - lo <= 1e-15 * hi) {
                    lo = hi = mid;
                    break;
                }
                if (load < target)
                    lo = mid;
                else
                    hi = mid;
            }
            threshold = 0.5 * (lo + hi);
        } else {
            const auto s = dist.sizes();
            const auto cw = dist.cumulative_work();
            const double needed = target * cw.back();
            const auto it = std::lower_bound(cw.begin(), cw.end(), needed);
            const auto idx = std::min<std::size_t>(it - cw.begin(), s.size() - 1);
            threshold = s[idx];
            if (partial_load(dist, threshold) != target)
                th.approximate = true;
        }
        th.m.push_back(threshold);
    }
    const double root = std::sqrt(1.0 - rho);
    for (int i = 0; i + 1 < n; ++i)
        th.c.push_back(th.m[i] / root);

    th.band_loads.push_back(partial_load(dist, th.m.front()));
    for (int i = 0; i + 1 < n; ++i)
        th.band_loads.push_back(partial_load(dist, th.m[i + 1]) - partial_load(dist, th.m[i]));
    th.band_loads.push_back(1.0 - partial_load(dist, th.m.back()));
    return th;
}

/// Pollaczek-Khinchine mean response time of an M/G/1 FCFS queue whose
/// service time is S / server_speed.
inline double mg1_mean_response(const Distribution& dist, double arrival_rate, double server_speed) {
    if (!(server_speed > 0.0) || !(arrival_rate >= 0.0))
        throw std::invalid_argument("mg1_mean_response: invalid rate or speed");
    const double ex = dist.mean() / server_speed;
    const double ex2 = dist.second_moment() / (server_speed * server_speed);
    const double rho = arrival_rate * ex;
    if (!(rho < 1.0))
        throw std::domain_error("mg1_mean_response: utilization " + std::to_string(rho) + " >= 1");
    return ex + arrival_rate * ex2 / (2.0 * (1.0 - rho));
}

} // namespace twostage
