#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "edgelab/parallel.hpp"
#include "edgelab/stats.hpp"

using namespace edgelab;

TEST(Stats, QuantilesFollowType7) {
    const std::vector<double> x{3, 1, 4, 1, 5, 9, 2, 6};
    // R: quantile(c(3,1,4,1,5,9,2,6), c(.1,.5,.9), type = 7) -> 1.0 3.5 6.9
    EXPECT_NEAR(stats::quantile(x, 0.1), 1.0, 1e-15);
    EXPECT_NEAR(stats::median(x), 3.5, 1e-15);
    EXPECT_NEAR(stats::quantile(x, 0.9), 6.9, 1e-14);
    EXPECT_NEAR(stats::mad(x), 2.0, 1e-15);
}

TEST(Stats, MomentsAndFits) {
    const std::vector<double> x{1, 2, 3, 4};
    const std::vector<double> y{3, 5, 7, 9};
    EXPECT_DOUBLE_EQ(stats::mean(x), 2.5);
    EXPECT_DOUBLE_EQ(stats::variance(x), 5.0 / 3.0);
    EXPECT_NEAR(stats::correlation(x, y), 1.0, 1e-15);
    const auto f = stats::fit_line(x, y);
    EXPECT_NEAR(f.slope, 2.0, 1e-15);
    EXPECT_NEAR(f.intercept, 1.0, 1e-15);
}

TEST(Stats, KolmogorovSurvival) {
    EXPECT_NEAR(stats::kolmogorov_survival(1.0), 0.26999967, 1e-7);
    EXPECT_NEAR(stats::kolmogorov_survival(1.36), 0.04946, 1e-4);
    EXPECT_EQ(stats::kolmogorov_survival(0.0), 1.0);
}

TEST(Stats, NormalityTestSeparatesGaussianFromExponential) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(3.0, 2.0);
    std::exponential_distribution<double> e(1.0);
    std::vector<double> a(400), b(400);
    for (auto& v : a) v = g(rng);
    for (auto& v : b) v = e(rng);
    const auto ta = stats::ks_normality(a, 2000, 1);
    const auto tb = stats::ks_normality(b, 2000, 1);
    EXPECT_GT(ta.p_value, 0.01);
    EXPECT_LT(tb.p_value, 0.01);
    EXPECT_GT(tb.distance, tb.critical_95);
    // Lilliefors critical value at n = 400 is about 0.886 / sqrt(n).
    EXPECT_NEAR(ta.critical_95 * std::sqrt(400.0), 0.886, 0.06);
}

TEST(Stats, TwoSampleKS) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g;
    std::vector<double> a(500), b(500), c(500);
    for (auto& v : a) v = g(rng);
    for (auto& v : b) v = g(rng);
    for (auto& v : c) v = g(rng) + 0.5;
    EXPECT_GT(stats::ks_two_sample(a, b).p_value, 0.01);
    EXPECT_LT(stats::ks_two_sample(a, c).p_value, 1e-6);
    EXPECT_EQ(stats::ks_two_sample(a, a).distance, 0.0);
}

TEST(Parallel, OrderAndExceptions) {
    for (unsigned w : {1u, 3u, 8u}) {
        const auto out = parallel_map(100, w, [](std::size_t i) { return static_cast<int>(i * i); });
        ASSERT_EQ(out.size(), 100u);
        for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
    }
    EXPECT_THROW(parallel_map(50, 4,
                              [](std::size_t i) {
                                  if (i == 17) throw std::runtime_error("boom");
                                  return 0;
                              }),
                 std::runtime_error);
}
