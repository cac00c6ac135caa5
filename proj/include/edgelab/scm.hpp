#pragma once

#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "edgelab/corrections.hpp"
#include "edgelab/errors.hpp"
#include "edgelab/polynomial.hpp"

namespace edgelab {

struct ModelOptions {
    // 1: tau ~ 1 - eps0. 2: adds eps1 (the default). >= 3: each further
    // level is one fixed-point sweep of R'(1 - eps) = 0 in eps.
    int series_depth = 2;
    // Bounds of the perturbative window.
    double max_z1_offset = 0.5;
    double max_zn = 0.5;
    double max_edge_offset = 0.5;
};

/// P(z, w) = 1 + z w + sum_n Z_n w^{2n}, equivalently w (z - R(w)) with
/// R(w) = -1/w - w - (Z_1 - 1) w - sum_{n>=2} Z_n w^{2n-1}.
class SelfConsistentModel {
public:
    int ell() const { return static_cast<int>(Z_.size()); }
    const std::vector<double>& Z() const { return Z_; }
    double z(int n) const { return Z_.at(static_cast<std::size_t>(n - 1)); }
    double tau() const { return tau_; }
    double edge_root() const { return edge_root_; }      // R(-tau)
    double edge_series() const { return edge_series_; }  // R(-tau_series)
    double tau_series() const { return tau_series_; }
    int series_depth() const { return depth_; }

    cplx R(cplx w) const {
        cplx r = -1.0 / w - w - (Z_[0] - 1.0) * w;
        for (int n = 2; n <= ell(); ++n) r -= z(n) * std::pow(w, 2 * n - 1);
        return r;
    }
    double R(double w) const { return R(cplx(w)).real(); }

    double dR(double w) const {
        double r = 1.0 / (w * w) - Z_[0];
        for (int n = 2; n <= ell(); ++n) r -= (2 * n - 1) * z(n) * std::pow(w, 2 * n - 2);
        return r;
    }

    double d2R(double w) const {
        double r = -2.0 / (w * w * w);
        for (int n = 2; n <= ell(); ++n) r -= (2 * n - 1) * (2 * n - 2) * z(n) * std::pow(w, 2 * n - 3);
        return r;
    }

    cplx P(cplx zz, cplx w) const {
        cplx r = 1.0 + zz * w;
        for (int n = 1; n <= ell(); ++n) r += z(n) * std::pow(w, 2 * n);
        return r;
    }

    /// dP/dw
    cplx dP(cplx zz, cplx w) const {
        cplx r = zz;
        for (int n = 1; n <= ell(); ++n) r += 2.0 * n * z(n) * std::pow(w, 2 * n - 1);
        return r;
    }

    /// d^2P/dw^2
    cplx d2P(cplx w) const {
        cplx r = 0.0;
        for (int n = 1; n <= ell(); ++n) r += 2.0 * n * (2 * n - 1) * z(n) * std::pow(w, 2 * n - 2);
        return r;
    }

    Polynomial polynomial_in_w(cplx zz) const {
        Polynomial p;
        p.c.assign(static_cast<std::size_t>(2 * ell() + 1), cplx(0.0));
        p.c[0] = 1.0;
        p.c[1] = zz;
        for (int n = 1; n <= ell(); ++n) p.c[static_cast<std::size_t>(2 * n)] += z(n);
        return p;
    }

    /// Distance from x to the nearer edge of [-L~, L~].
    double kappa(double x) const { return std::min(std::fabs(x - edge_root_), std::fabs(x + edge_root_)); }

    /// Sum of the correction sizes |Z_1 - 1| + sum_{n>=2} |Z_n|.
    double perturbation_size() const {
        double s = std::fabs(Z_[0] - 1.0);
        for (int n = 2; n <= ell(); ++n) s += std::fabs(z(n));
        return s;
    }

    friend SelfConsistentModel build(const std::vector<double>& Z, const ModelOptions& opt);

private:
    std::vector<double> Z_;
    double tau_ = 1.0;
    double tau_series_ = 1.0;
    double edge_root_ = 2.0;
    double edge_series_ = 2.0;
    int depth_ = 2;
};

namespace detail {

inline double solve_tau(const SelfConsistentModel& m) {
    double t = 1.0;
    for (int it = 0; it < 100; ++it) {
        const double f = m.dR(t);
        if (std::fabs(f) <= 1e-12) break;
        const double df = m.d2R(t);
        if (!(std::isfinite(df)) || df == 0.0) break;
        t -= f / df;
        if (!(t > 0.5 && t < 1.5)) break;
    }
    if (t > 0.5 && t < 1.5 && std::fabs(m.dR(t)) <= 1e-12) return t;

    // Bisection on [0.5, 1.5]; R' is decreasing there in the window.
    double lo = 0.5, hi = 1.5;
    double flo = m.dR(lo), fhi = m.dR(hi);
    if (!(flo > 0.0 && fhi < 0.0) && !(flo < 0.0 && fhi > 0.0)) {
        throw DegenerateModel("critical point of R not bracketed in (0.5, 1.5)");
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = m.dR(mid);
        if ((fm > 0.0) == (flo > 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if (hi - lo < 1e-15) break;
    }
    t = 0.5 * (lo + hi);
    if (std::fabs(m.dR(t)) > 1e-10) throw DegenerateModel("critical point of R did not converge");
    return t;
}

// eps with tau ~ 1 - eps from the truncated expansion of R'(1 - eps) = 0.
inline double series_eps(const std::vector<double>& Z, int depth) {
    const int ell = static_cast<int>(Z.size());
    const double x = Z[0] - 1.0;
    double eps0 = x;
    for (int n = 2; n <= ell; ++n) eps0 += (2 * n - 1) * Z[static_cast<std::size_t>(n - 1)];
    eps0 *= 0.5;
    if (depth <= 1) return eps0;

    auto shift_sum = [&](double e) {
        double s = 0.0;
        for (int n = 2; n <= ell; ++n) {
            s += (2 * n - 1) * Z[static_cast<std::size_t>(n - 1)] * (std::pow(1.0 - e, 2 * n - 2) - 1.0);
        }
        return s;
    };
    if (depth == 2) {
        const double eps1 = 0.5 * shift_sum(eps0) - eps0 * eps0 / (1.0 - eps0);
        return eps0 + eps1;
    }
    // (1-e)^{-2} - 1 = 2e + g(e), g(e) = (1-e)^{-2} - 1 - 2e.
    double e = 0.0;
    for (int m = 0; m < depth; ++m) {
        const double g = 1.0 / ((1.0 - e) * (1.0 - e)) - 1.0 - 2.0 * e;
        e = eps0 + 0.5 * (shift_sum(e) - g);
    }
    return e;
}

}  // namespace detail

inline SelfConsistentModel build(const std::vector<double>& Z, const ModelOptions& opt = {}) {
    if (Z.empty()) throw ValidationError("build: need at least Z_1");
    if (opt.series_depth < 1) throw ValidationError("build: series_depth must be >= 1");
    for (double v : Z) {
        if (!std::isfinite(v)) throw DegenerateModel("non-finite correction term");
    }
    if (std::fabs(Z[0] - 1.0) > opt.max_z1_offset) {
        throw DegenerateModel("Z_1 = " + std::to_string(Z[0]) + " is outside the window |Z_1 - 1| <= 0.5");
    }
    for (std::size_t n = 1; n < Z.size(); ++n) {
        if (std::fabs(Z[n]) > opt.max_zn) {
            throw DegenerateModel("Z_" + std::to_string(n + 1) + " = " + std::to_string(Z[n]) +
                                  " is outside the window |Z_n| <= 0.5");
        }
    }
    SelfConsistentModel m;
    m.Z_ = Z;
    m.depth_ = opt.series_depth;
    m.tau_ = detail::solve_tau(m);
    m.edge_root_ = m.R(-m.tau_);
    if (std::fabs(m.edge_root_ - 2.0) > opt.max_edge_offset) {
        throw DegenerateModel("edge " + std::to_string(m.edge_root_) + " is outside the window |L - 2| <= 0.5");
    }
    m.tau_series_ = 1.0 - detail::series_eps(Z, opt.series_depth);
    m.edge_series_ = m.R(-m.tau_series_);
    return m;
}

inline SelfConsistentModel build(const CorrectionSet& cs, const ModelOptions& opt = {}) { return build(cs.Z, opt); }

// ---------------------------------------------------------------------------
// Stieltjes transform by branch continuation

struct StieltjesPoint {
    cplx z;
    cplx w;
    double residual = 0.0;  // |P(z, w)|
};

struct BranchOptions {
    double start_height = 1e6;
    int steps_per_decade = 8;
    int max_refinements = 40;
    // A step is ambiguous when the second-closest root is within this factor
    // of the distance to the closest one.
    double separation_factor = 3.0;
};

namespace detail {

// Root of P(z, .) continued from `prev`; nullopt when the choice is ambiguous.
inline std::optional<cplx> follow(const SelfConsistentModel& m, cplx zz, cplx prev, const BranchOptions& bo) {
    const auto rs = roots(m.polynomial_in_w(zz));
    double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
    cplx best = prev;
    for (const auto& r : rs) {
        const double d = std::abs(r - prev);
        if (d < d1) {
            d2 = d1;
            d1 = d;
            best = r;
        } else if (d < d2) {
            d2 = d;
        }
    }
    if (d2 < bo.separation_factor * d1) return std::nullopt;
    return best;
}

}  // namespace detail

/// m~(z): the root of P(z, .) continued from w ~ -1/z high on the vertical
/// line through Re z.
inline StieltjesPoint stieltjes(const SelfConsistentModel& m, cplx zz, const BranchOptions& bo = {}) {
    if (!(zz.imag() > 0.0)) throw ValidationError("stieltjes: Im z must be positive");
    const double x = zz.real();
    const double y_end = zz.imag();
    const double y_start = std::max(bo.start_height, y_end);

    cplx z0(x, y_start);
    cplx w = newton_polish(m.polynomial_in_w(z0), -1.0 / z0, 8);

    if (y_end < y_start) {
        const double decades = std::log10(y_start / y_end);
        const int steps = std::max(1, static_cast<int>(std::ceil(decades * bo.steps_per_decade)));
        const double ratio = std::pow(y_end / y_start, 1.0 / steps);
        double y = y_start;
        for (int s = 0; s < steps; ++s) {
            const double target = (s + 1 == steps) ? y_end : y * ratio;
            // Subdivide [y, target] geometrically until every step is unambiguous.
            double lo = target;
            int depth = 0;
            while (y != target) {
                const auto next = detail::follow(m, cplx(x, lo), w, bo);
                if (next) {
                    w = *next;
                    y = lo;
                    lo = target;
                    depth = 0;
                    continue;
                }
                if (++depth > bo.max_refinements) {
                    std::ostringstream os;
                    os << "branch tracking ambiguous near z = " << x << " + " << lo << "i";
                    throw BranchTrackingError(os.str());
                }
                lo = std::sqrt(y * lo);
            }
        }
    }
    const auto poly = m.polynomial_in_w(zz);
    w = newton_polish(poly, w, 4);
    if (!(w.imag() > 0.0)) {
        std::ostringstream os;
        os << "continued root has Im w = " << w.imag() << " <= 0 at z = " << zz;
        throw BranchTrackingError(os.str());
    }
    return {zz, w, std::abs(m.P(zz, w))};
}

inline constexpr double kDefaultEtaFloor = 1e-6;

/// (1/pi) Im m~(x + i eta_floor): the density smoothed at scale eta_floor.
inline double density(const SelfConsistentModel& m, double x, double eta_floor = kDefaultEtaFloor) {
    if (!(eta_floor >= 1e-9 && eta_floor <= 1e-3)) throw ValidationError("density: eta_floor must lie in [1e-9, 1e-3]");
    return stieltjes(m, cplx(x, eta_floor)).w.imag() / std::numbers::pi;
}

inline double control_phi(const SelfConsistentModel& m, cplx zz) {
    const double eta = zz.imag();
    const double k = m.kappa(zz.real());
    const double a = std::sqrt(k + eta);
    return std::fabs(zz.real()) <= m.edge_root() ? a : eta / a;
}

/// Nine-term local-law bound at z for dimension N.
inline double local_law_rhs(const SelfConsistentModel& m, cplx zz, double N) {
    const double eta = zz.imag();
    const double a = std::sqrt(m.kappa(zz.real()) + eta);
    const double phi = control_phi(m, zz);
    const double ne = N * eta;
    double s = 0.0;
    s += std::pow(phi / ne, 0.5);
    s += std::pow(a, 0.25) * std::pow(phi / ne, 0.375);
    s += std::pow(N, -0.25) * std::pow(phi / ne, 0.125);
    s += std::pow(a, 0.25) * std::pow(phi / (ne * ne), 0.25);
    s += 1.0 / (std::sqrt(N) * std::pow(eta, 0.25));
    s += 1.0 / ne;
    s += std::pow(a, 0.4) / std::pow(ne, 0.6);
    s += 1.0 / (std::pow(N, 2.0 / 7.0) * std::pow(ne, 1.0 / 7.0));
    s += std::pow(a, 1.0 / 3.0) / std::pow(ne, 2.0 / 3.0);
    return s;
}

/// CSV rows x, eta, Re m~, Im m~, density, phi, local_law_rhs.
inline std::string grid_csv(const SelfConsistentModel& m, const std::vector<double>& xs, double eta, double N) {
    std::ostringstream os;
    os << "schema_version,1\n";
    os << "x,eta,re_m,im_m,rho,phi,local_law_rhs\n";
    char buf[512];
    for (double x : xs) {
        const cplx zz(x, eta);
        const auto pt = stieltjes(m, zz);
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", x, eta, pt.w.real(),
                      pt.w.imag(), pt.w.imag() / std::numbers::pi, control_phi(m, zz), local_law_rhs(m, zz, N));
        os << buf;
    }
    return os.str();
}

}  // namespace edgelab
