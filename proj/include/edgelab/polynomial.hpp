#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <vector>

#include "edgelab/errors.hpp"

namespace edgelab {

using cplx = std::complex<double>;

/// Polynomial with complex coefficients, c[k] multiplies w^k.
struct Polynomial {
    std::vector<cplx> c;

    int degree() const { return static_cast<int>(c.size()) - 1; }

    cplx operator()(cplx w) const {
        cplx r = 0.0;
        for (auto it = c.rbegin(); it != c.rend(); ++it) r = r * w + *it;
        return r;
    }

    // p(w) and p'(w) by one Horner pass.
    std::pair<cplx, cplx> eval_with_derivative(cplx w) const {
        cplx p = 0.0, dp = 0.0;
        for (auto it = c.rbegin(); it != c.rend(); ++it) {
            dp = dp * w + p;
            p = p * w + *it;
        }
        return {p, dp};
    }

    // Drops exactly-zero leading coefficients.
    Polynomial trimmed() const {
        Polynomial out = *this;
        while (out.c.size() > 1 && out.c.back() == cplx(0.0)) out.c.pop_back();
        return out;
    }
};

inline cplx newton_polish(const Polynomial& p, cplx w, int steps = 3) {
    for (int s = 0; s < steps; ++s) {
        const auto [v, dv] = p.eval_with_derivative(w);
        if (dv == cplx(0.0)) break;
        const cplx step = v / dv;
        if (!std::isfinite(step.real()) || !std::isfinite(step.imag())) break;
        w -= step;
        if (std::abs(step) <= 1e-16 * std::abs(w)) break;
    }
    return w;
}

/// All roots by simultaneous Aberth-Ehrlich iteration, each polished by
/// Newton. Throws NumericError if the iteration does not settle.
inline std::vector<cplx> roots(const Polynomial& poly) {
    const Polynomial p = poly.trimmed();
    const int d = p.degree();
    if (d < 1) throw NumericError("roots: polynomial of degree < 1");
    const cplx lead = p.c.back();
    if (d == 1) return {-p.c[0] / lead};
    if (d == 2) {
        const cplx a = lead, b = p.c[1], c = p.c[0];
        const cplx disc = std::sqrt(b * b - 4.0 * a * c);
        // Pick the sign avoiding cancellation.
        const cplx qv = -0.5 * (b + (std::real(std::conj(b) * disc) >= 0.0 ? disc : -disc));
        if (qv == cplx(0.0)) return {cplx(0.0), cplx(0.0)};
        return {newton_polish(p, qv / a), newton_polish(p, c / qv)};
    }

    // Initial guesses on a circle whose radius bounds the root moduli.
    double radius = 0.0;
    for (int k = 0; k < d; ++k) {
        radius = std::max(radius, std::pow(std::abs(p.c[static_cast<std::size_t>(k)] / lead), 1.0 / (d - k)));
    }
    radius = std::max(radius, 1e-3);
    std::vector<cplx> z(static_cast<std::size_t>(d));
    for (int k = 0; k < d; ++k) {
        const double ang = 2.0 * std::numbers::pi * k / d + 0.4;
        z[static_cast<std::size_t>(k)] = std::polar(radius, ang);
    }

    // Rounding-error bound of Horner's rule at |w| = r.
    auto noise = [&](double r) {
        double s = 0.0;
        for (auto it = p.c.rbegin(); it != p.c.rend(); ++it) s = s * r + std::abs(*it);
        return 8.0 * std::numeric_limits<double>::epsilon() * s;
    };

    bool converged = false;
    for (int it = 0; it < 500 && !converged; ++it) {
        converged = true;
        for (int k = 0; k < d; ++k) {
            auto& zk = z[static_cast<std::size_t>(k)];
            const auto [v, dv] = p.eval_with_derivative(zk);
            if (std::abs(v) <= noise(std::abs(zk))) continue;
            const cplx ratio = v / dv;
            cplx sum = 0.0;
            for (int j = 0; j < d; ++j) {
                if (j != k) sum += 1.0 / (zk - z[static_cast<std::size_t>(j)]);
            }
            const cplx step = ratio / (1.0 - ratio * sum);
            if (!std::isfinite(step.real()) || !std::isfinite(step.imag())) continue;
            zk -= step;
            if (std::abs(step) > 1e-15 * std::max(1.0, std::abs(zk))) converged = false;
        }
    }
    if (!converged) throw NumericError("roots: Aberth iteration did not converge");
    for (auto& zk : z) zk = newton_polish(p, zk);
    return z;
}

}  // namespace edgelab
