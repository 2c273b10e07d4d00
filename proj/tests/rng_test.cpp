#include <cmath>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "mlmc/rng.hpp"
#include "mlmc/stats.hpp"

using namespace mlmc;

// Known-answer vectors published with the Random123 reference implementation.
TEST(Philox, KnownAnswerVectors) {
    EXPECT_EQ(philox4x32_10({0, 0, 0, 0}, {0, 0}),
              (std::array<std::uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
    EXPECT_EQ(philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}),
              (std::array<std::uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
    EXPECT_EQ(philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}),
              (std::array<std::uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(RngStream, SameSeedAndStreamReplays) {
    RngStream a(1, 0), b(1, 0);
    EXPECT_EQ(a.gaussian_vector(3), b.gaussian_vector(3));
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(RngStream, SplitIsPureAndDoesNotAdvanceParent) {
    RngStream parent(7, 3);
    const RngStream before = parent;
    RngStream c1 = parent.derive(2, 5);
    RngStream c2 = before.derive(2, 5);
    EXPECT_EQ(c1.stream_id(), c2.stream_id());
    EXPECT_EQ(c1.next_u64(), c2.next_u64());
    EXPECT_EQ(parent.next_u64(), RngStream(7, 3).next_u64());
    EXPECT_NE(parent.split(1).stream_id(), parent.split(2).stream_id());
}

TEST(RngStream, UniformInOpenUnitInterval) {
    RngStream s(11, 0);
    for (int i = 0; i < 100000; ++i) {
        const double u = s.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(RngStream, GaussianMomentsMillionDraws) {
    RngStream s(2024, 0);
    const int n = 1'000'000;
    RunningStats st;
    for (int i = 0; i < n; ++i) st.push(s.normal());
    EXPECT_LT(std::abs(st.mean()), 4.0 / std::sqrt(n));
    EXPECT_LT(std::abs(st.variance() - 1.0), 0.01);
}

TEST(RngStream, GaussianVectorComponentsUncorrelated) {
    RngStream s(99, 4);
    const int n = 1'000'000;
    double sxy = 0, sxx = 0, syy = 0, sx = 0, sy = 0;
    for (int i = 0; i < n; ++i) {
        const Vector v = s.gaussian_vector(2);
        sx += v(0);
        sy += v(1);
        sxy += v(0) * v(1);
        sxx += v(0) * v(0);
        syy += v(1) * v(1);
    }
    const double mx = sx / n, my = sy / n;
    const double rho = (sxy / n - mx * my) / std::sqrt((sxx / n - mx * mx) * (syy / n - my * my));
    EXPECT_LT(std::abs(rho), 0.01);
}

TEST(RngStream, DistinctStreamsUncorrelated) {
    RngStream base(5, 0);
    for (std::uint64_t lane = 0; lane < 5; ++lane) {
        RngStream a = base.split(lane), b = base.split(lane + 1);
        const int n = 200000;
        double sab = 0, saa = 0, sbb = 0;
        for (int i = 0; i < n; ++i) {
            const double x = a.normal(), y = b.normal();
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        EXPECT_LT(std::abs(sab / std::sqrt(saa * sbb)), 5.0 / std::sqrt(n));
    }
}

TEST(ProbabilityVector, RejectsNegativeAndUnnormalized) {
    EXPECT_THROW(ProbabilityVector({0.5, -0.1, 0.6}), std::invalid_argument);
    EXPECT_THROW(ProbabilityVector({0.5, 0.6}), std::invalid_argument);
    EXPECT_THROW(ProbabilityVector::normalize(std::vector<double>{0.0, 0.0}), std::invalid_argument);
    EXPECT_NO_THROW(ProbabilityVector({0.25, 0.75}));
}

TEST(ProbabilityVector, LogWeightsSoftmaxWithoutOverflow) {
    std::vector<double> lw = {1000.0, 1000.0 + std::log(3.0), -std::numeric_limits<double>::infinity()};
    const auto p = ProbabilityVector::from_log_weights(lw);
    EXPECT_NEAR(p[0], 0.25, 1e-12);
    EXPECT_NEAR(p[1], 0.75, 1e-12);
    EXPECT_EQ(p[2], 0.0);
    double sum = 0;
    for (double x : p.values()) sum += x;
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Categorical, DegenerateAlwaysZero) {
    RngStream s(3, 0);
    ProbabilityVector p({1.0, 0.0, 0.0});
    for (int i = 0; i < 1000; ++i) EXPECT_EQ(categorical_sample(p, s), 0u);
}

TEST(Categorical, FairCoinFrequency) {
    RngStream s(4, 0);
    ProbabilityVector p({0.5, 0.5});
    int zeros = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) zeros += categorical_sample(p, s) == 0;
    EXPECT_GE(zeros / double(n), 0.49);
    EXPECT_LE(zeros / double(n), 0.51);
}

TEST(Categorical, TableMatchesLinearScanAndSkipsZeroMass) {
    ProbabilityVector p({0.2, 0.0, 0.3, 0.0, 0.5});
    CategoricalTable table(p);
    for (double u : {1e-9, 0.1999, 0.2001, 0.4999, 0.5001, 0.999999}) {
        const auto j = table.sample_at(u);
        EXPECT_NE(j, 1u);
        EXPECT_NE(j, 3u);
    }
    EXPECT_EQ(table.sample_at(0.1), 0u);
    EXPECT_EQ(table.sample_at(0.3), 2u);
    EXPECT_EQ(table.sample_at(0.9), 4u);
}
