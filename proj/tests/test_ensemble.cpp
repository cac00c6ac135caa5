#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <vector>

#include "edgelab/ensemble.hpp"

using namespace edgelab;
using Rational = boost::multiprecision::cpp_rational;

namespace {

// Cumulant kappa_n from raw moments by summing over all set partitions of
// {1..n}: kappa_n = sum_pi (-1)^{|pi|-1} (|pi|-1)! prod_{B in pi} m_{|B|}.
Rational partition_cumulant(int n, const std::vector<Rational>& m) {
    Rational total = 0;
    std::vector<int> block_of(static_cast<std::size_t>(n), 0);
    std::function<void(int, int)> rec = [&](int pos, int blocks) {
        if (pos == n) {
            std::vector<int> sizes(static_cast<std::size_t>(blocks), 0);
            for (int b : block_of) ++sizes[static_cast<std::size_t>(b)];
            Rational term = 1;
            for (int s : sizes) term *= m[static_cast<std::size_t>(s)];
            Rational fact = 1;
            for (int k = 2; k < blocks; ++k) fact *= k;
            total += ((blocks - 1) % 2 ? -1 : 1) * fact * term;
            return;
        }
        for (int b = 0; b <= blocks; ++b) {
            block_of[static_cast<std::size_t>(pos)] = b;
            rec(pos + 1, std::max(blocks, b + 1));
        }
    };
    rec(0, 0);
    return total;
}

double to_double(const Rational& r) { return static_cast<double>(r); }

// SignedSparse with rational s^2 and q^2: m_{2k} = p (s^2/q^2)^k, p = q^2/(s^2 N).
std::vector<Rational> signed_sparse_moments(Rational s2, Rational q2, Rational n) {
    std::vector<Rational> m(9, 0);
    m[0] = 1;
    const Rational p = q2 / (s2 * n);
    for (int k = 1; 2 * k <= 8; ++k) {
        Rational v = p;
        for (int t = 0; t < k; ++t) v *= s2 / q2;
        m[static_cast<std::size_t>(2 * k)] = v;
    }
    return m;
}

EnsembleSpec spec_of(std::size_t n, double b, EntryFamily f = EntryFamily::SignedSparse, double s = 1.0) {
    EnsembleSpec e;
    e.N = n;
    e.b = b;
    e.family = f;
    e.scale = s;
    return e;
}

}  // namespace

TEST(Cumulants, SignedSparseMatchesRationalOracle) {
    // N = 10^4, b = 1/4: q = 10 exactly.
    for (int s2 : {1, 2, 6}) {
        auto spec = spec_of(10000, 0.25, EntryFamily::SignedSparse, std::sqrt(static_cast<double>(s2)));
        const auto prof = cumulants(spec);
        const auto m = signed_sparse_moments(s2, 100, 10000);
        for (int p = 2; p <= 8; ++p) {
            const double oracle = to_double(partition_cumulant(p, m));
            EXPECT_NEAR(prof.C[p], oracle, 1e-12 * std::fabs(oracle) + 1e-300) << "s^2=" << s2 << " p=" << p;
        }
    }
}

TEST(Cumulants, FourthCumulantForScaleSqrt6) {
    // c_4 = 1 - q^2 / (2N) exactly for s^2 = 6.
    for (std::size_t n : {10000u, 160000u}) {
        auto spec = spec_of(n, 0.25, EntryFamily::SignedSparse, std::sqrt(6.0));
        const double q2 = std::sqrt(static_cast<double>(n));
        const auto m = signed_sparse_moments(6, Rational(static_cast<long long>(q2)), static_cast<long long>(n));
        const Rational c4 = partition_cumulant(4, m) * static_cast<long long>(n) * static_cast<long long>(q2) / 6;
        EXPECT_NEAR(cumulants(spec).c[4], to_double(c4), 1e-12);
        EXPECT_NEAR(to_double(c4), 1.0 - q2 / (2.0 * static_cast<double>(n)), 1e-14);
    }
}

TEST(Cumulants, CenteredBernoulliMatchesRationalOracle) {
    // p0 = q^2/N = 1/100. Cumulants of chi - p0 are rational; h = (chi - p0)/sigma.
    const Rational p = Rational(1, 100);
    std::vector<Rational> m(9, 0);
    m[0] = 1;
    for (int k = 1; k <= 8; ++k) {
        Rational a = 1, b = 1;
        for (int t = 0; t < k; ++t) {
            a *= (1 - p);
            b *= -p;
        }
        m[static_cast<std::size_t>(k)] = p * a + (1 - p) * b;
    }
    const auto spec = spec_of(10000, 0.25, EntryFamily::CenteredBernoulli);
    const auto prof = cumulants(spec);
    const double sigma = std::sqrt(10000.0 * 0.01 * 0.99);
    for (int k = 2; k <= 8; ++k) {
        const double oracle = to_double(partition_cumulant(k, m)) / std::pow(sigma, k);
        EXPECT_NEAR(prof.C[k], oracle, 1e-11 * std::fabs(oracle)) << k;
    }
}

TEST(Cumulants, SecondCumulantExact) {
    for (std::size_t n : {50u, 1000u, 4096u}) {
        for (auto f : {EntryFamily::SignedSparse, EntryFamily::CenteredBernoulli}) {
            const auto prof = cumulants(spec_of(n, 0.15, f));
            EXPECT_EQ(prof.C[2], 1.0 / static_cast<double>(n));
        }
    }
}

TEST(Cumulants, NormalizationIsBoundedNearDenseLimit) {
    // Close to q = sqrt(N) the normalized cumulants stay O(1). The c_4 floor
    // is lifted because the entry law degenerates towards the dense limit.
    auto spec = spec_of(1u << 20, 0.49, EntryFamily::SignedSparse, std::sqrt(6.0));
    spec.c_min = -1e9;
    const auto prof = cumulants(spec);
    for (int p = 2; p <= 8; ++p) EXPECT_LT(std::fabs(prof.c[p]), 10.0) << p;
}

TEST(Cumulants, Rejections) {
    EXPECT_THROW(cumulants(spec_of(1000, 0.2, EntryFamily::SignedSparse, 0.1)), ValidationError);
    auto strict = spec_of(1000, 0.2);
    strict.c_min = 0.5;
    EXPECT_THROW(cumulants(strict), ValidationError);
    EXPECT_THROW(cumulants(spec_of(1000, 0.6)), ValidationError);
    EXPECT_THROW(cumulants(spec_of(1000, 0.0)), ValidationError);
    EXPECT_THROW(cumulants(spec_of(0, 0.2)), ValidationError);
}

TEST(Sample, OneByOneMoments) {
    auto spec = spec_of(1, 0.2, EntryFamily::SignedSparse, std::sqrt(2.0));
    const int draws = 1000000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < draws; ++i) {
        const double h = sample(spec, static_cast<std::uint64_t>(i)).entries(0, 0);
        s1 += h;
        s2 += h * h;
    }
    // h = +-sqrt(2) w.p. 1/4 each, 0 otherwise: Var h = 1, Var h^2 = E h^4 - 1 = 1.
    EXPECT_LE(std::fabs(s1 / draws), 5.0 / std::sqrt(draws));
    EXPECT_LE(std::fabs(s2 / draws - 1.0), 5.0 / std::sqrt(draws));
}

TEST(Sample, DeterministicAndSymmetric) {
    const auto spec = spec_of(300, 0.2);
    const auto a = sample(spec, 17);
    const auto b = sample(spec, 17);
    EXPECT_EQ(a.entries, b.entries);
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_NE(sample(spec, 18).entries, a.entries);
    auto other = spec;
    other.master_seed = 1;
    EXPECT_NE(sample(other, 17).entries, a.entries);
    for (std::size_t i = 0; i < 300; ++i) {
        for (std::size_t j = 0; j < 300; ++j) ASSERT_EQ(a.entries(i, j), a.entries(j, i));
    }
}

TEST(Sample, SupportMembership) {
    for (auto f : {EntryFamily::SignedSparse, EntryFamily::CenteredBernoulli}) {
        const auto spec = spec_of(200, 0.25, f);
        const auto law = entry_law(spec);
        const auto smp = sample(spec, 0);
        std::set<double> values(smp.entries.data().begin(), smp.entries.data().end());
        for (double v : values) {
            if (f == EntryFamily::SignedSparse) {
                EXPECT_TRUE(v == 0.0 || v == law.hi || v == -law.hi) << v;
            } else {
                EXPECT_TRUE(v == law.hi || v == law.lo) << v;
            }
        }
    }
}

namespace {

// Pooled upper-triangle p-th moment against the closed form, in standard errors.
double moment_z_score(const EnsembleSpec& spec, int p, int samples) {
    double acc = 0.0;
    std::size_t count = 0;
    for (int m = 0; m < samples; ++m) {
        const auto smp = sample(spec, static_cast<std::uint64_t>(m));
        for (std::size_t i = 0; i < spec.N; ++i) {
            for (std::size_t j = i; j < spec.N; ++j) acc += std::pow(smp.entries(i, j), p);
        }
        count += spec.N * (spec.N + 1) / 2;
    }
    const double mean = entry_moment(spec, p);
    const double var = entry_moment(spec, 2 * p) - mean * mean;
    return (acc / static_cast<double>(count) - mean) / std::sqrt(var / static_cast<double>(count));
}

}  // namespace

TEST(Sample, MomentConsistency) {
    for (auto f : {EntryFamily::SignedSparse, EntryFamily::CenteredBernoulli}) {
        const auto spec = spec_of(400, 0.2, f);
        for (int p : {1, 2, 4, 6}) EXPECT_LE(std::fabs(moment_z_score(spec, p, 40)), 5.0) << to_string(f) << p;
    }
}

TEST(Sample, FourthMomentAtN2000) {
    EXPECT_LE(std::fabs(moment_z_score(spec_of(2000, 0.2), 4, 200)), 5.0);
}

TEST(SpecText, RoundTripAndErrors) {
    auto spec = spec_of(1234, 0.15, EntryFamily::CenteredBernoulli);
    spec.master_seed = 987654321987654321ull;
    EXPECT_EQ(parse_spec_text(to_config_text(spec)), spec);

    EXPECT_EQ(parse_spec_text("N = 50 # dimension\n\nb = 0.3\n").N, 50u);
    try {
        parse_spec_text("N = 50\nbogus = 1\n");
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
    }
    EXPECT_THROW(parse_spec_text("b = 0.6\n"), ValidationError);
    EXPECT_THROW(parse_spec_text("family = Gaussian\n"), ValidationError);
}

TEST(BinaryDump, RoundTrip) {
    const auto smp = sample(spec_of(31, 0.3), 2);
    const auto path = (std::filesystem::temp_directory_path() / "edgelab_test_dump.bin").string();
    write_binary(path, smp.entries);
    EXPECT_EQ(std::filesystem::file_size(path), 8u + 31u * 31u * 8u);
    EXPECT_EQ(read_binary(path), smp.entries);
    std::filesystem::remove(path);
}
