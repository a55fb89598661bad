#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "oracles.hpp"
#include "twostage/metrics.hpp"

using namespace twostage;

TEST(JobResponse, MaxCompletionMinusArrival) {
    const std::array<double, 3> c{5, 9, 7};
    EXPECT_DOUBLE_EQ(job_response(2, c), 7.0);
    const std::array<double, 1> single{3.5};
    EXPECT_DOUBLE_EQ(job_response(3, single), 0.5);
    const std::array<double, 2> tied{4, 4};
    EXPECT_DOUBLE_EQ(job_response(1, tied), 3.0);
    EXPECT_THROW(job_response(0, std::span<const double>{}), std::invalid_argument);
}

TEST(NormalizedMrt, DividesByMg1) {
    const auto d = Distribution::weibull(fit_weibull(1, 10));
    EXPECT_NEAR(normalized_mrt(406, &d, 0.8, 1.0).value(), 2.0, 1e-9);
    EXPECT_FALSE(normalized_mrt(406, nullptr, 0.8, 1.0).has_value());
    EXPECT_THROW(normalized_mrt(1, &d, 1.2, 1.0), std::domain_error);
}

TEST(Summarize, DegenerateReplications) {
    const std::array<double, 4> v{3, 3, 3, 3};
    const auto s = summarize(v);
    EXPECT_EQ(s.mean, 3.0);
    EXPECT_EQ(s.ci_half_width.value(), 0.0);
}

TEST(Summarize, StudentTHalfWidth) {
    const std::array<double, 3> v{1, 2, 3};
    const auto s = summarize(v);
    EXPECT_DOUBLE_EQ(s.mean, 2.0);
    // two degrees of freedom: t_p = (2p - 1) / sqrt(2p(1 - p))
    const double t = 0.95 / std::sqrt(2 * 0.975 * 0.025);
    EXPECT_NEAR(s.ci_half_width.value(), t / std::sqrt(3.0), 1e-12);
    const std::array<double, 1> one{7};
    EXPECT_FALSE(summarize(one).ci_half_width.has_value());
}

TEST(Summarize, PermutationInvariant) {
    std::vector<double> v{0.1, 1e6, 3.3, -2, 17, 1e-9, 42};
    const auto a = summarize(v);
    std::reverse(v.begin(), v.end());
    std::swap(v[1], v[4]);
    const auto b = summarize(v);
    EXPECT_EQ(a.mean, b.mean);
    EXPECT_EQ(a.ci_half_width, b.ci_half_width);
}

TEST(Warmup, ByArrivalOrdinal) {
    EXPECT_EQ(warmup_count(100, {}), 10u);
    EXPECT_EQ(warmup_count(19, {}), 1u);
    MeasureOptions opt;
    opt.warmup_jobs = 250;
    EXPECT_EQ(warmup_count(100, opt), 100u);
}

TEST(Measure, MeanOfStoredResponses) {
    const auto w = generate_poisson_weibull(0.7, fit_weibull(1, 3), 5000, 2);
    const auto cfg = calibrate_mu(w, 3, 0.7);
    const auto r = measure(w, cfg, PolicySpec{PolicyKind::jiq, {}, {}}, 5);
    EXPECT_EQ(r.warmup_jobs, 500u);
    EXPECT_EQ(r.job_count, 4500u);
    EXPECT_EQ(r.mrt, mean_of(r.responses));
    for (double x : r.responses)
        ASSERT_GT(x, 0.0);
    EXPECT_FALSE(r.normalized_mrt.has_value());
}

TEST(Measure, SingleTaskJobResponseEqualsTaskResponse) {
    const auto w = generate_poisson_weibull(0.5, fit_weibull(1, 2), 300, 8);
    const auto cfg = calibrate_mu(w, 2, 0.5);
    const PolicySpec spec{PolicyKind::lwl, {}, {}};
    std::vector<double> task_resp(w.jobs.size());
    run(w, cfg, spec, 4, [&](const TaskCompletion& c) { task_resp[c.job] = c.completion - c.arrival; });
    MeasureOptions opt;
    opt.warmup_jobs = 0;
    const auto r = measure(w, cfg, spec, 4, opt);
    ASSERT_EQ(r.responses.size(), task_resp.size());
    for (std::size_t i = 0; i < task_resp.size(); ++i)
        ASSERT_EQ(r.responses[i], task_resp[i]);
}

TEST(Measure, MultiTaskJobsUseLastTask) {
    const auto w = oracle::make_workload({{1, 0, {2, 6}}, {2, 1, {1}}});
    MeasureOptions opt;
    opt.warmup_jobs = 0;
    const auto r = measure(w, oracle::config(2, 1.0), PolicySpec{PolicyKind::rr, {}, {}}, 1, opt);
    // server 1: task 2 -> done 2; server 2: task 6 -> done 6; job 2 on server 1 -> 3
    ASSERT_EQ(r.responses.size(), 2u);
    EXPECT_DOUBLE_EQ(r.responses[0], 6.0);
    EXPECT_DOUBLE_EQ(r.responses[1], 2.0);
}

TEST(ResponseCollector, MissingCompletionThrows) {
    const auto w = oracle::make_workload({{1, 0, {2, 6}}});
    ResponseCollector collector(w, 1);
    collector(TaskCompletion{0, 0, 0.0, 2.0, 1, 0, 2.0});
    EXPECT_THROW(collector.responses(0), std::runtime_error);
    collector(TaskCompletion{0, 1, 0.0, 6.0, 1, 1, 6.0});
    EXPECT_EQ(collector.responses(0).front(), 6.0);
    EXPECT_THROW(collector(TaskCompletion{0, 1, 0.0, 6.0, 1, 1, 6.0}), std::logic_error);
}

TEST(Replicate, DistinctSeedsGiveDistinctResults) {
    std::vector<double> per_rep;
    const auto s = replicate_and_summarize(
        4, 10,
        [](std::uint64_t seed) {
            const auto w = generate_poisson_weibull(0.8, fit_weibull(1, 1), 2000, seed);
            return measure(w, calibrate_mu(w, 1, 0.8), PolicySpec{}, seed).mrt;
        },
        &per_rep);
    ASSERT_EQ(per_rep.size(), 4u);
    std::sort(per_rep.begin(), per_rep.end());
    EXPECT_EQ(std::adjacent_find(per_rep.begin(), per_rep.end()), per_rep.end());
    EXPECT_TRUE(s.ci_half_width.has_value());
}

TEST(Replicate, ConfidenceIntervalCoverage) {
    // M/M/1 at rho 0.8 with unit mean: E[R] = 5.
    constexpr int kTrials = 200;
    constexpr std::size_t kJobs = 100000;
    int covered = 0;
    for (int trial = 0; trial < kTrials; ++trial) {
        const auto s = replicate_and_summarize(10, 1000 + trial, [](std::uint64_t seed) {
            const auto w = generate_poisson_weibull(0.8, fit_weibull(1, 1), kJobs, seed);
            MeasureOptions opt;
            opt.keep_responses = false;
            return measure(w, calibrate_mu(w, 1, 0.8), PolicySpec{}, seed, opt).mrt;
        });
        covered += std::abs(s.mean - 5.0) <= *s.ci_half_width;
    }
    const double rate = static_cast<double>(covered) / kTrials;
    EXPECT_GE(rate, 0.95 - 3 * std::sqrt(0.95 * 0.05 / kTrials));
}
