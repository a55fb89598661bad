#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "twostage/random.hpp"

using namespace twostage;

TEST(Stream, UniformStaysInOpenUnitInterval) {
    Stream s(42);
    for (int i = 0; i < 100000; ++i) {
        const double u = s.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(Stream, SameKeySameDraws) {
    Stream a(7);
    Stream b(7);
    for (int i = 0; i < 1000; ++i)
        ASSERT_EQ(a.next(), b.next());
}

TEST(Stream, SplitStreamsDiffer) {
    const Stream root(7);
    Stream a = root.split(StreamLabel::arrivals);
    Stream b = root.split(StreamLabel::sizes);
    int equal = 0;
    for (int i = 0; i < 1000; ++i)
        equal += a.next() == b.next();
    EXPECT_EQ(equal, 0);
}

TEST(Stream, SplitDoesNotAdvanceParent) {
    Stream a(3);
    Stream b(3);
    (void)a.split(1);
    EXPECT_EQ(a.next(), b.next());
}

TEST(Stream, BelowIsUniform) {
    Stream s(11);
    constexpr int kBins = 7;
    constexpr int kDraws = 140000;
    std::vector<int> counts(kBins, 0);
    for (int i = 0; i < kDraws; ++i)
        ++counts[s.below(kBins)];
    const double p = 1.0 / kBins;
    const double sigma = std::sqrt(kDraws * p * (1 - p));
    for (int c : counts)
        EXPECT_NEAR(c, kDraws * p, 4 * sigma);
}

TEST(Stream, UniformMeanAndVariance) {
    Stream s(5);
    constexpr int kDraws = 1000000;
    double sum = 0.0;
    double sq = 0.0;
    for (int i = 0; i < kDraws; ++i) {
        const double u = s.uniform();
        sum += u;
        sq += u * u;
    }
    EXPECT_NEAR(sum / kDraws, 0.5, 5 * std::sqrt(1.0 / 12 / kDraws));
    EXPECT_NEAR(sq / kDraws - (sum / kDraws) * (sum / kDraws), 1.0 / 12, 1e-3);
}

TEST(DeriveSeed, DistinctPerReplication) {
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t r = 0; r < 1000; ++r)
        seeds.push_back(derive_seed(1, r));
    std::sort(seeds.begin(), seeds.end());
    EXPECT_EQ(std::adjacent_find(seeds.begin(), seeds.end()), seeds.end());
}
