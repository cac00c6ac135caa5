#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "edgelab/ensemble.hpp"
#include "edgelab/scm.hpp"
#include "edgelab/spectral.hpp"

using namespace edgelab;

namespace {

DenseMatrix random_symmetric(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(static_cast<double>(n)));
    DenseMatrix a(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) a(i, j) = a(j, i) = g(rng);
    }
    return a;
}

EnsembleSpec small_spec(std::size_t n, std::uint64_t seed = 5) {
    EnsembleSpec s;
    s.N = n;
    s.b = 0.3;
    s.master_seed = seed;
    return s;
}

std::vector<EigenBackend> backends() {
    std::vector<EigenBackend> b{EigenBackend::Native};
    if (lapack_available()) b.push_back(EigenBackend::Lapack);
    return b;
}

double max_abs(const DenseMatrix& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::fabs(v));
    return m;
}

}  // namespace

TEST(Eigen, TwoByTwo) {
    DenseMatrix a(2);
    a(0, 1) = a(1, 0) = 0.7;
    for (auto be : backends()) {
        const auto sp = eigen(a, false, be);
        ASSERT_EQ(sp.size(), 2u);
        EXPECT_NEAR(sp.eigenvalues[0], 0.7, 1e-15);
        EXPECT_NEAR(sp.eigenvalues[1], -0.7, 1e-15);
    }
}

TEST(Eigen, Diagonal) {
    DenseMatrix a(3);
    a(0, 0) = 1.0;
    a(1, 1) = 2.0;
    a(2, 2) = 3.0;
    for (auto be : backends()) {
        const auto sp = eigen(a, true, be);
        EXPECT_EQ(sp.eigenvalues, (std::vector<double>{3.0, 2.0, 1.0}));
    }
}

TEST(Eigen, TraceInvariance) {
    const auto smp = sample(small_spec(50), 0);
    double tr = 0.0;
    for (std::size_t i = 0; i < 50; ++i) tr += smp.entries(i, i);
    for (auto be : backends()) {
        const auto sp = eigen(smp, false, be);
        double s = 0.0;
        for (double l : sp.eigenvalues) s += l;
        EXPECT_NEAR(s, tr, 1e-10);
        EXPECT_TRUE(std::is_sorted(sp.eigenvalues.rbegin(), sp.eigenvalues.rend()));
    }
}

TEST(Eigen, ReconstructionAndOrthonormality) {
    for (std::size_t n : {1u, 2u, 7u, 60u, 150u}) {
        const auto a = random_symmetric(n, n);
        for (auto be : backends()) {
            const auto sp = eigen(a, true, be);
            const auto& v = *sp.vectors;
            double rec = 0.0, orth = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    double s = 0.0, o = 0.0;
                    for (std::size_t k = 0; k < n; ++k) {
                        s += v(i, k) * sp.eigenvalues[k] * v(j, k);
                        o += v(k, i) * v(k, j);
                    }
                    rec = std::max(rec, std::fabs(s - a(i, j)));
                    orth = std::max(orth, std::fabs(o - (i == j ? 1.0 : 0.0)));
                }
            }
            EXPECT_LE(rec, 1e-9 * max_abs(a)) << n;
            EXPECT_LE(orth, 1e-12) << n;
        }
    }
}

TEST(Eigen, NativeMatchesLapack) {
    if (!lapack_available()) GTEST_SKIP() << "LAPACK not compiled in";
    for (std::uint64_t idx = 0; idx < 5; ++idx) {
        const auto smp = sample(small_spec(300), idx);
        const auto a = eigen(smp, false, EigenBackend::Native);
        const auto b = eigen(smp, false, EigenBackend::Lapack);
        for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a.eigenvalues[j], b.eigenvalues[j], 1e-12);
    }
}

TEST(Eigen, Deterministic) {
    const auto smp = sample(small_spec(120), 3);
    EXPECT_EQ(eigen(smp, false).eigenvalues, eigen(smp, false).eigenvalues);
}

TEST(Eigen, FailureDumpsMatrix) {
    DenseMatrix a(2);
    a(0, 1) = a(1, 0) = 1.5;
    try {
        detail::fail_with_dump(a, "forced");
        FAIL();
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        const auto pos = msg.find("dumped to ");
        ASSERT_NE(pos, std::string::npos);
        const std::string path = msg.substr(pos + 10);
        ASSERT_TRUE(std::filesystem::exists(path));
        EXPECT_EQ(read_binary(path), a);
        std::filesystem::remove(path);
    }
}

TEST(Sturm, CountsMatchSpectrum) {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 4; ++trial) {
        const auto smp = sample(small_spec(80, 40 + static_cast<std::uint64_t>(trial)), 0);
        const auto t = tridiagonalize(smp.entries);
        const auto sp = eigen(smp, false);
        std::uniform_real_distribution<double> u(-2.5, 2.5);
        for (int k = 0; k < 25; ++k) {
            double lo = u(rng), hi = u(rng);
            if (lo > hi) std::swap(lo, hi);
            const auto in = std::count_if(sp.eigenvalues.begin(), sp.eigenvalues.end(),
                                          [&](double l) { return l >= lo && l < hi; });
            EXPECT_EQ(sturm_count(t, hi) - sturm_count(t, lo), static_cast<std::size_t>(in));
        }
    }
}

TEST(Sturm, TopEigenvaluesByBisection) {
    const auto smp = sample(small_spec(200), 8);
    const auto top = top_eigenvalues(tridiagonalize(smp.entries), 5);
    const auto sp = eigen(smp, false);
    ASSERT_EQ(top.size(), 5u);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(top[j], sp.eigenvalues[j], 1e-12);
}

TEST(EmpiricalStieltjes, Values) {
    SpectrumResult sp;
    sp.eigenvalues = {0.3};
    const cplx m = empirical_stieltjes(sp, cplx(0.0, 1.0));
    EXPECT_NEAR(m.real(), 0.3 / 1.09, 1e-15);
    EXPECT_NEAR(m.imag(), 1.0 / 1.09, 1e-15);

    const auto big = eigen(sample(small_spec(40), 1), false);
    const double y = 1e8;
    const cplx far = empirical_stieltjes(big, cplx(0.0, y));
    EXPECT_NEAR(far.imag() * y, 1.0, 1e-6);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> ux(-3, 3), uy(-8, 0);
    for (int k = 0; k < 200; ++k) {
        EXPECT_GT(empirical_stieltjes(big, cplx(ux(rng), std::pow(10.0, uy(rng)))).imag(), 0.0);
    }
}

TEST(Identities, WardSmall) {
    const auto smp = sample(small_spec(3), 2);
    const cplx z(2.0, 0.1);
    for (std::size_t r = 0; r < 3; ++r) EXPECT_LE(check_ward(smp, z, r), 1e-10);

    DenseMatrix one(1);
    one(0, 0) = 0.4;
    const auto sp = eigen(one, true);
    EXPECT_LE(check_ward(sp, cplx(0.1, 0.3), 0), 1e-15);
}

TEST(Identities, WardSmallEta) {
    const auto smp = sample(small_spec(100), 4);
    const auto sp = eigen(smp, true);
    const double eta = 1e-4;
    for (std::size_t r : {0u, 17u, 99u}) {
        EXPECT_LE(check_ward(sp, cplx(1.9, eta), r), 1e-8 / (eta * eta));
    }
}

TEST(Identities, ResolventAtI) {
    const auto smp = sample(small_spec(60), 6);
    const auto sp = eigen(smp, true);
    for (std::size_t i : {0u, 31u, 59u}) EXPECT_LE(check_resolvent_identity(smp.entries, sp, cplx(0.0, 1.0), i), 1e-11);

    DenseMatrix one(1);
    one(0, 0) = -0.2;
    EXPECT_LE(check_resolvent_identity(one, eigen(one, true), cplx(0.5, 0.2), 0), 1e-14);
}

TEST(Identities, ResolventNearShiftedEdge) {
    EnsembleSpec s = small_spec(200);
    s.b = 0.2;
    const auto smp = sample(s, 0);
    const auto model = build(compute_Z(smp, 2));
    const double eta = std::pow(200.0, -2.0 / 3.0);
    const cplx z(model.edge_series(), eta);
    const auto sp = eigen(smp, true);
    EXPECT_LE(check_resolvent_identity(smp.entries, sp, z, 0), 1e-9 * (1.0 + 1.0 / (eta * eta)));
    EXPECT_LE(check_ward(sp, z, 0), 1e-8 / (eta * eta));
}

TEST(Identities, RequireVectorsAndUpperHalfPlane) {
    const auto sp = eigen(sample(small_spec(5), 0), false);
    EXPECT_THROW(check_ward(sp, cplx(0, 1), 0), ValidationError);
    const auto spv = eigen(sample(small_spec(5), 0), true);
    EXPECT_THROW(check_ward(spv, cplx(0, 0), 0), ValidationError);
}

TEST(SpectrumCsv, Format) {
    SpectrumResult sp;
    sp.eigenvalues = {1.5, -0.25};
    EXPECT_EQ(spectrum_csv(sp), "schema_version,1\nindex,eigenvalue\n1,1.5\n2,-0.25\n");
}
