#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "edgelab/scm.hpp"
#include "edgelab/stats.hpp"

using namespace edgelab;

namespace {

// R'(tau) = 0 for Z = (1, z2) is 1 - u - 3 z2 u^2 = 0 in u = tau^2.
double tau_quadratic(double z2) {
    const double a = 3.0 * z2;
    return std::sqrt((-1.0 + std::sqrt(1.0 + 4.0 * a)) / (2.0 * a));
}

cplx semicircle_m(cplx z) {
    // Branch with Im m > 0 for Im z > 0.
    cplx r = std::sqrt(z * z - 4.0);
    if (std::imag(r) * std::imag(z) < 0 || (std::imag(r) == 0 && std::real(r) * std::real(z) < 0)) r = -r;
    return (-z + r) / 2.0;
}

}  // namespace

TEST(Model, SemicircleLimit) {
    const auto m = build({1.0, 0.0});
    EXPECT_NEAR(m.tau(), 1.0, 1e-14);
    EXPECT_NEAR(m.edge_root(), 2.0, 1e-14);
    EXPECT_NEAR(m.edge_series(), 2.0, 1e-14);
}

TEST(Model, QuadraticCriticalPoint) {
    const auto m = build({1.0, 0.1});
    const double tau = tau_quadratic(0.1);
    EXPECT_NEAR(tau, 0.8974405248809274, 1e-15);
    EXPECT_NEAR(m.tau(), tau, 1e-12);
    EXPECT_LE(std::fabs(m.dR(m.tau())), 1e-10);
    const double edge = 1.0 / tau + tau + 0.1 * tau * tau * tau;
    EXPECT_NEAR(m.edge_root(), edge, 1e-12);
}

TEST(Model, SeriesMatchesRootForSmallShift) {
    const auto m = build({1.02, 0.0});
    // Only Z_1 shifts: tau = Z_1^{-1/2}, edge 2 sqrt(Z_1).
    EXPECT_NEAR(m.tau(), 1.0 / std::sqrt(1.02), 1e-13);
    EXPECT_NEAR(m.edge_root(), 2.0 * std::sqrt(1.02), 1e-13);
    EXPECT_NEAR(1.0 - m.tau_series(), 0.01 - 1e-4 / 0.99, 1e-15);
    EXPECT_LE(std::fabs(m.edge_root() - m.edge_series()), 1e-3);
}

TEST(Model, DeeperSeriesConverges) {
    const std::vector<double> z{1.02, 0.04};
    const auto exact = build(z);
    double prev = std::fabs(exact.edge_root() - build(z, {.series_depth = 3}).edge_series());
    for (int depth = 4; depth <= 8; ++depth) {
        const double err = std::fabs(exact.edge_root() - build(z, {.series_depth = depth}).edge_series());
        EXPECT_LE(err, prev * 1.0001 + 1e-15) << depth;
        prev = err;
    }
    EXPECT_LE(prev, 1e-10);
}

TEST(Model, RejectsCorrectionsOutsideWindow) {
    EXPECT_THROW(build({1.6, 0.0}), DegenerateModel);
    EXPECT_THROW(build({1.0, -0.6}), DegenerateModel);
    EXPECT_THROW(build({std::nan(""), 0.0}), DegenerateModel);
    EXPECT_THROW(build({1.0, 0.0}, {.series_depth = 0}), ValidationError);
}

TEST(Model, SeriesRootAgreementOverWindow) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    int built = 0;
    for (int t = 0; t < 500; ++t) {
        const std::vector<double> z{1.0 + u(rng), u(rng)};
        try {
            const auto m = build(z);
            ++built;
            const double size = m.perturbation_size();
            EXPECT_LE(std::fabs(m.edge_root() - m.edge_series()), 10.0 * size * size) << z[0] << " " << z[1];
        } catch (const DegenerateModel&) {
        }
    }
    EXPECT_GT(built, 100);
}

TEST(Stieltjes, SemicircleClosedForms) {
    const auto m = build({1.0, 0.0});
    const auto out = stieltjes(m, cplx(2.5, 1e-12));
    EXPECT_NEAR(out.w.real(), -0.5, 1e-10);
    EXPECT_NEAR(out.w.imag(), 0.0, 1e-10);

    const auto at_i = stieltjes(m, cplx(0.0, 1.0));
    EXPECT_NEAR(at_i.w.real(), 0.0, 1e-14);
    EXPECT_NEAR(at_i.w.imag(), (std::sqrt(5.0) - 1.0) / 2.0, 1e-14);

    for (double x : {-3.0, -1.9, -0.7, 0.0, 0.3, 1.99, 2.01, 4.0}) {
        for (double eta : {1e-6, 1e-3, 0.1, 2.0}) {
            const cplx z(x, eta);
            EXPECT_LE(std::abs(stieltjes(m, z).w - semicircle_m(z)), 1e-9) << z;
        }
    }
}

TEST(Stieltjes, ResidualNearShiftedEdge) {
    const auto m = build({1.0, 0.1});
    const cplx z(m.edge_root(), 1e-3);
    const auto out = stieltjes(m, z);
    EXPECT_LE(out.residual, 1e-12 * (1.0 + std::abs(z)));
    EXPECT_GT(out.w.imag(), 0.0);
    EXPECT_LT(out.w.imag(), 1.0);
}

TEST(Stieltjes, RejectsLowerHalfPlane) {
    const auto m = build({1.0, 0.0});
    EXPECT_THROW(stieltjes(m, cplx(0.0, 0.0)), ValidationError);
    EXPECT_THROW(stieltjes(m, cplx(0.0, -1.0)), ValidationError);
}

TEST(Stieltjes, HerglotzMassAndSymmetry) {
    const auto m = build({1.03, 0.08});
    const double y = 1e4;
    const cplx w = stieltjes(m, cplx(0.0, y)).w;
    EXPECT_NEAR((-cplx(0.0, 1.0) * y * w).real(), 1.0, 1e-6);
    for (double x : {-2.3, -1.0, 0.0, 0.4, 1.5, 2.05, 2.6}) {
        for (double eta : {1e-5, 1e-2, 0.5}) {
            const cplx z(x, eta);
            const cplx a = stieltjes(m, z).w;
            const cplx b = stieltjes(m, cplx(-x, eta)).w;
            EXPECT_GT(a.imag(), 0.0);
            EXPECT_NEAR(b.real(), -a.real(), 1e-10);
            EXPECT_NEAR(b.imag(), a.imag(), 1e-10);
        }
    }
}

TEST(Stieltjes, EdgeDerivativeScaling) {
    const auto m = build({1.02, 0.1});
    const double size = m.perturbation_size();
    for (double s = 1e-6; s <= 1e-2; s *= 10.0) {
        for (double frac : {0.0, 0.5, 1.0}) {
            // Points z = L + kappa + i eta with kappa + eta = s, on both sides.
            for (int side : {-1, 1}) {
                const double eta = frac == 0.0 ? s : s * frac;
                const double kappa = s - eta;
                const cplx z(m.edge_root() + side * kappa, eta);
                const cplx w = stieltjes(m, z).w;
                const double ratio = std::abs(m.dP(z, w)) / std::sqrt(kappa + eta);
                EXPECT_GT(ratio, 1.0 / 3.0) << z;
                EXPECT_LT(ratio, 3.0) << z;
                EXPECT_LE(std::abs(m.d2P(w) - 2.0), 10.0 * size);

                const double im_ratio = kappa == 0.0 || side < 0 ? w.imag() / std::sqrt(kappa + eta)
                                                                 : w.imag() / (eta / std::sqrt(kappa + eta));
                EXPECT_GT(im_ratio, 0.2) << z;
                EXPECT_LT(im_ratio, 5.0) << z;
            }
        }
    }
}

TEST(Density, SemicircleValues) {
    const auto m = build({1.0, 0.0});
    EXPECT_NEAR(density(m, 0.0), 1.0 / std::numbers::pi, 1e-6);
    EXPECT_LE(density(m, 3.0), 1e-5);
    EXPECT_THROW(density(m, 0.0, 1e-2), ValidationError);
    EXPECT_THROW(density(m, 0.0, 1e-10), ValidationError);
}

TEST(Density, SquareRootEdge) {
    const auto m = build({1.0, 0.1});
    std::vector<double> lk, lr;
    for (int i = 0; i <= 20; ++i) {
        const double kappa = std::pow(10.0, -4.0 + 2.0 * i / 20.0);
        lk.push_back(std::log(kappa));
        lr.push_back(std::log(density(m, m.edge_root() - kappa)));
    }
    EXPECT_NEAR(stats::fit_line(lk, lr).slope, 0.5, 0.05);
}

TEST(Control, PhiFormula) {
    const auto m = build({1.0, 0.0});
    EXPECT_NEAR(control_phi(m, cplx(2.0, 1e-2)), 0.1, 1e-15);
    EXPECT_NEAR(control_phi(m, cplx(2.04, 1e-4)), 1e-4 / std::sqrt(0.0401), 1e-15);
    EXPECT_NEAR(control_phi(m, cplx(0.0, 1e-12)), std::sqrt(2.0), 1e-9);
}

TEST(Control, LocalLawBound) {
    const auto m = build({1.0, 0.0});
    const double n = 1e6;
    const double s = std::pow(n, -2.0 / 3.0);
    for (int side : {-1, 1}) {
        const cplx z(m.edge_root() + side * s, s);
        EXPECT_LE(local_law_rhs(m, z, n), 10.0 * std::pow(n, -1.0 / 3.0)) << side;
    }

    const double big = local_law_rhs(m, cplx(2.0, 1.0), 1000.0);
    EXPECT_TRUE(std::isfinite(big));
    EXPECT_GT(big, 0.0);

    const double n0 = 1000.0;
    const double s0 = std::pow(n0, -2.0 / 3.0);
    const cplx z0(m.edge_root() - s0, s0);
    double prev = local_law_rhs(m, z0, n0);
    for (double nn = 2 * n0; nn <= 64 * n0; nn *= 2) {
        const double v = local_law_rhs(m, z0, nn);
        EXPECT_LT(v, prev);
        prev = v;
    }
}

TEST(Grid, CsvShape) {
    const auto m = build({1.0, 0.0});
    const auto csv = grid_csv(m, {0.0, 1.0}, 1e-6, 1000.0);
    EXPECT_EQ(csv.rfind("schema_version,1\nx,eta,re_m,im_m,rho,phi,local_law_rhs\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}
