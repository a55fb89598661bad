#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "twostage/analysis.hpp"
#include "twostage/policies.hpp"

using namespace twostage;

namespace {

double three_sigma(double draws, double p) { return 3 * std::sqrt(draws * p * (1 - p)); }

DispatchContext ctx(Stream& rng, std::optional<double> size = std::nullopt, double now = 0.0) {
    return DispatchContext{size, now, &rng};
}

} // namespace

TEST(RoundRobin, FormulaExamples) {
    EXPECT_EQ(rr_choose(1, 10), 1u);
    EXPECT_EQ(rr_choose(10, 10), 10u);
    EXPECT_EQ(rr_choose(11, 10), 1u);
}

TEST(RoundRobin, EveryWindowCoversAllServers) {
    RoundRobin rr(7);
    Stream rng(1);
    for (int start = 0; start < 5; ++start) {
        std::array<int, 7> hits{};
        for (int k = 0; k < 7; ++k)
            ++hits[rr.choose(ctx(rng))];
        for (int h : hits)
            EXPECT_EQ(h, 1);
    }
}

TEST(JoinIdleQueue, StartsAllIdle) {
    JoinIdleQueue jiq(5);
    for (bool b : jiq.bits())
        EXPECT_TRUE(b);
}

TEST(JoinIdleQueue, SingleIdleServerForced) {
    JoinIdleQueue jiq(4);
    jiq.set_bits({false, false, true, false});
    Stream rng(3);
    EXPECT_EQ(jiq.choose(ctx(rng)), 2u);
    for (bool b : jiq.bits())
        EXPECT_FALSE(b);
}

TEST(JoinIdleQueue, NoIdleIsUniform) {
    JoinIdleQueue jiq(4);
    jiq.set_bits({false, false, false, false});
    Stream rng(99);
    constexpr int kDraws = 100000;
    std::array<int, 4> hits{};
    for (int i = 0; i < kDraws; ++i)
        ++hits[jiq.choose(ctx(rng))];
    for (int h : hits)
        EXPECT_NEAR(h, kDraws * 0.25, three_sigma(kDraws, 0.25));
}

TEST(JoinIdleQueue, UniformAmongIdle) {
    Stream rng(5);
    constexpr int kDraws = 60000;
    std::array<int, 5> hits{};
    for (int i = 0; i < kDraws; ++i) {
        JoinIdleQueue jiq(5);
        jiq.set_bits({true, false, true, false, true});
        ++hits[jiq.choose(ctx(rng))];
    }
    EXPECT_EQ(hits[1] + hits[3], 0);
    for (int j : {0, 2, 4})
        EXPECT_NEAR(hits[j], kDraws / 3.0, three_sigma(kDraws, 1.0 / 3));
}

TEST(JoinIdleQueue, IdleNotificationSetsBit) {
    JoinIdleQueue jiq(3);
    jiq.set_bits({false, false, false});
    jiq.on_server_idle(1);
    EXPECT_EQ(jiq.bits(), (std::vector<bool>{false, true, false}));
    jiq.on_server_idle(1);
    Stream rng(1);
    EXPECT_EQ(jiq.choose(ctx(rng)), 1u);
    EXPECT_FALSE(jiq.bit(1));
}

TEST(LeastWorkLeft, UniqueMinimum) {
    Stream rng(1);
    const std::array<double, 2> w{4, 0};
    EXPECT_EQ(lwl_choose(w, rng), 1u);
    const std::array<double, 4> w4{3, 2, 5, 2.5};
    EXPECT_EQ(lwl_choose(w4, rng), 1u);
}

TEST(LeastWorkLeft, TiesUniform) {
    Stream rng(17);
    constexpr int kDraws = 100000;
    const std::array<double, 3> w{0, 0, 1};
    std::array<int, 3> hits{};
    for (int i = 0; i < kDraws; ++i)
        ++hits[lwl_choose(w, rng)];
    EXPECT_EQ(hits[2], 0);
    EXPECT_NEAR(hits[0], kDraws * 0.5, three_sigma(kDraws, 0.5));
}

TEST(LeastWorkLeft, ViewDrainsAtSpeed) {
    LeastWorkLeft lwl(2, 0.5);
    Stream rng(1);
    const auto first = lwl.choose(ctx(rng, std::nullopt, 0.0));
    lwl.on_assign(first, 5.0, 0.0);
    EXPECT_DOUBLE_EQ(lwl.view().work(first, 0.0), 5.0);
    EXPECT_DOUBLE_EQ(lwl.view().work(first, 4.0), 3.0);
    EXPECT_EQ(lwl.choose(ctx(rng, std::nullopt, 1.0)), 1 - first);
    EXPECT_DOUBLE_EQ(lwl.view().work(first, 20.0), 0.0);
}

TEST(Card, SmallTaskGoesToLeastLoaded) {
    const auto th = card_thresholds(Distribution::weibull({1, 1}), 3, 0.5);
    Stream rng(2);
    const std::array<double, 3> w{5, 1, 9};
    EXPECT_EQ(card_choose(th.m[0] * 0.5, w, th, rng), 1u);
}

TEST(Card, LargestBandGoesToMostLoaded) {
    const auto th = card_thresholds(Distribution::weibull({1, 1}), 2, 0.5);
    Stream rng(2);
    const std::array<double, 2> w{7, 2};
    EXPECT_EQ(card_choose(th.m[1] * 2, w, th, rng), 0u);
}

TEST(Card, MiddleBandRespectsWorkThreshold) {
    const auto th = card_thresholds(Distribution::weibull({1, 1}), 3, 0.5);
    Stream rng(2);
    const double s = 0.5 * (th.m[0] + th.m[1]);
    // W_(1) <= c_1: rank 1
    const std::array<double, 3> light{th.c[0] * 0.5, th.c[0] * 4, th.c[0] * 8};
    EXPECT_EQ(card_choose(s, light, th, rng), 0u);
    // W_(1) > c_1: rank 2
    const std::array<double, 3> heavy{th.c[0] * 8, th.c[0] * 2, th.c[0] * 4};
    EXPECT_EQ(card_choose(s, heavy, th, rng), 2u);
    // exact boundary W_(1) == c_1 stays on rank 1
    const std::array<double, 3> edge{th.c[0] * 3, th.c[0], th.c[0] * 4};
    EXPECT_EQ(card_choose(s, edge, th, rng), 1u);
}

TEST(Card, RankTiesBrokenUniformly) {
    const auto th = card_thresholds(Distribution::weibull({1, 1}), 3, 0.5);
    Stream rng(12);
    const std::array<double, 3> w{0, 0, 0};
    constexpr int kDraws = 60000;
    std::array<int, 3> hits{};
    for (int i = 0; i < kDraws; ++i)
        ++hits[card_choose(0.01, w, th, rng)];
    for (int h : hits)
        EXPECT_NEAR(h, kDraws / 3.0, three_sigma(kDraws, 1.0 / 3));
}

TEST(Card, SingleServer) {
    Card card(1, 1.0, card_thresholds(Distribution::weibull({1, 1}), 1, 0.5));
    Stream rng(1);
    EXPECT_EQ(card.choose(ctx(rng, 3.0)), 0u);
}

TEST(Card, ScaleInvariantRanks) {
    // Scaling sizes and work together leaves every decision unchanged.
    const auto base = Distribution::weibull(fit_weibull(1, 4));
    const auto scaled = Distribution::weibull(fit_weibull(7.5, 4));
    const auto a = card_thresholds(base, 6, 0.8);
    const auto b = card_thresholds(scaled, 6, 0.8);
    Stream rng(44);
    std::vector<double> scratch;
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<double> w(6);
        std::vector<double> w_scaled(6);
        for (std::size_t j = 0; j < 6; ++j) {
            w[j] = rng.exponential(0.5);
            w_scaled[j] = 7.5 * w[j];
        }
        const double s = rng.exponential(1.0) * 2;
        ASSERT_EQ(card_rank(s, w, a, scratch), card_rank(7.5 * s, w_scaled, b, scratch));
    }
}

TEST(Needs, DeclaredInformation) {
    EXPECT_EQ(RoundRobin::needs, InformationNeed::none);
    EXPECT_EQ(JoinIdleQueue::needs, InformationNeed::idle_bits);
    EXPECT_EQ(LeastWorkLeft::needs, InformationNeed::unfinished_work);
    EXPECT_EQ(Card::needs, InformationNeed::size);
}

TEST(PolicyName, ParsesPlainAndTwoStage) {
    EXPECT_EQ(parse_policy_name("lwl").kind, PolicyKind::lwl);
    EXPECT_FALSE(parse_policy_name("card").two_stage);
    const auto p = parse_policy_name("two_stage:jiq,n1=7,theta_q=0.99");
    EXPECT_TRUE(p.two_stage);
    EXPECT_EQ(p.kind, PolicyKind::jiq);
    EXPECT_EQ(p.n1, 7);
    EXPECT_EQ(p.theta_quantile, 0.99);
    EXPECT_FALSE(p.theta);
    EXPECT_EQ(parse_policy_name("two_stage:rr,theta=2.5").theta, 2.5);
    EXPECT_EQ(p.label(), "two_stage:jiq");
}

TEST(PolicyName, Rejects) {
    EXPECT_THROW(parse_policy_name("fifo"), std::invalid_argument);
    EXPECT_THROW(parse_policy_name("two_stage:card"), std::invalid_argument);
    EXPECT_THROW(parse_policy_name("two_stage:rr,n1"), std::invalid_argument);
    EXPECT_THROW(parse_policy_name("two_stage:rr,n1=x"), std::invalid_argument);
    EXPECT_THROW(parse_policy_name("two_stage:rr,k=3"), std::invalid_argument);
}
